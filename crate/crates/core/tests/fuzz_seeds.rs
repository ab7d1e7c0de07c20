//! Runs the checked-in fuzz seeds through the same parser entry points and
//! checks as the fuzz targets, so the seeds stay meaningful on stable.

use std::fs;
use std::path::{Path, PathBuf};

use sieve_core::distiller::LabeledRecord;
use sieve_core::jsonl::parse_jsonl;
use sieve_core::oracle::{parse_chat_response, parse_verdict, PromptTemplate, ReplayStore, TemplateName};
use sieve_core::pipeline::parse_corpus_line;
use sieve_core::scorer::ScorerParams;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("seed-"))
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(out.len() >= 3, "{target} has too few seeds");
    out
}

/// Runs `check` on every seed and returns how many were accepted.
fn accepted(target: &str, check: impl Fn(&[u8]) -> bool) -> usize {
    seeds(target).iter().filter(|(_, b)| check(b)).count()
}

#[test]
fn verdict_seeds() {
    let n = accepted("parse_verdict", |data| {
        let raw = std::str::from_utf8(data).unwrap();
        let mut ok = false;
        for name in TemplateName::BUILTIN {
            let t = PromptTemplate::builtin(name).unwrap();
            if parse_verdict(raw, &t).is_ok() {
                let lower = raw.to_ascii_lowercase();
                assert!(lower.contains("pass") || lower.contains("fail"));
                ok = true;
            }
        }
        ok
    });
    assert!(n >= 10, "{n}");
}

#[test]
fn chat_response_seeds() {
    let n = accepted("parse_chat_response", |data| {
        parse_chat_response(std::str::from_utf8(data).unwrap()).is_ok()
    });
    assert!(n >= 1, "{n}");
}

#[test]
fn replay_store_seeds() {
    let n = accepted("replay_store", |data| match ReplayStore::parse(data) {
        Ok(map) => {
            assert!(map.iter().all(|(id, r)| *id == r.id));
            true
        }
        Err(_) => false,
    });
    assert!(n >= 2, "{n}");
}

#[test]
fn labeled_jsonl_seeds() {
    let n = accepted("labeled_jsonl", |data| match parse_jsonl::<LabeledRecord>(data, "seed") {
        Ok(read) => {
            let again = parse_jsonl::<LabeledRecord>(&data[..read.valid_len], "seed").unwrap();
            assert_eq!(again.records, read.records);
            true
        }
        Err(_) => false,
    });
    assert!(n >= 3, "{n}");
}

#[test]
fn model_file_seeds() {
    let n = accepted("model_file", |data| {
        match ScorerParams::from_model_str(std::str::from_utf8(data).unwrap()) {
            Ok(p) => {
                let again = ScorerParams::from_model_str(&p.to_model_string()).unwrap();
                assert_eq!(again.to_model_string(), p.to_model_string());
                true
            }
            Err(_) => false,
        }
    });
    assert!(n >= 2, "{n}");
}

#[test]
fn corpus_line_seeds() {
    let n = accepted("corpus_line", |data| parse_corpus_line(std::str::from_utf8(data).unwrap()).is_ok());
    assert!(n >= 3, "{n}");
}
