//! Invariants of corpus chunking, line-delimited storage, and filtering.

use std::collections::BTreeSet;

use proptest::prelude::*;
use serde::{Deserialize, Serialize};

use sieve_core::jsonl::parse_jsonl;
use sieve_core::pipeline::{apply_filter, chunk_document, parse_corpus_line, IngestConfig, SnippetStore, Tokenizer};
use sieve_core::scorer::{FeatureSpace, ScorerParams};

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Rec {
    id: u64,
    note: String,
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(("[a-z]{1,6}", prop::sample::select(vec![" ", "  ", "\n", "\t", " \n "])), 0..60)
        .prop_map(|ws| ws.into_iter().map(|(w, sep)| w + sep).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn whitespace_chunks_cover_the_document(text in words(), size in 1usize..9) {
        let chunks = chunk_document("doc", &text, size, Tokenizer::Whitespace);
        let rejoined: Vec<&str> = chunks.iter().flat_map(|c| c.text.split_whitespace()).collect();
        prop_assert_eq!(rejoined, text.split_whitespace().collect::<Vec<_>>());
        for (k, c) in chunks.iter().enumerate() {
            prop_assert_eq!(c.offset, (k * size) as u64);
            prop_assert!(c.text.split_whitespace().count() <= size);
            prop_assert!(text.contains(&c.text));
        }
    }

    #[test]
    fn char_chunks_cover_the_document(text in "\\PC{0,200}", size in 1usize..6) {
        let chunks = chunk_document("doc", &text, size, Tokenizer::Chars4);
        let rejoined: String = chunks.iter().map(|c| c.text.as_str()).collect();
        // Whitespace-only windows are dropped; everything else survives in order.
        prop_assert_eq!(
            rejoined.chars().filter(|c| !c.is_whitespace()).collect::<String>(),
            text.chars().filter(|c| !c.is_whitespace()).collect::<String>()
        );
        prop_assert!(chunks.iter().all(|c| c.text.chars().count() <= 4 * size));
    }

    #[test]
    fn corpus_lines_parse_or_explain(line in "\\PC{0,80}") {
        // Never panics; a successful parse always carries the text field.
        if let Ok(doc) = parse_corpus_line(&line) {
            let v: serde_json::Value = serde_json::from_str(&line).unwrap();
            prop_assert_eq!(v["text"].as_str(), Some(doc.text.as_str()));
        }
    }

    #[test]
    fn torn_files_read_as_a_prefix(
        recs in prop::collection::vec((any::<u64>(), "[a-z\"\\\\ ]{0,12}"), 0..12),
        cut in any::<prop::sample::Index>(),
    ) {
        let recs: Vec<Rec> = recs.into_iter().map(|(id, note)| Rec { id, note }).collect();
        let mut bytes = Vec::new();
        let mut ends = Vec::new();
        for r in &recs {
            bytes.extend(serde_json::to_vec(r).unwrap());
            ends.push(bytes.len());
            bytes.push(b'\n');
        }
        let cut = cut.index(bytes.len() + 1);
        let read = parse_jsonl::<Rec>(&bytes[..cut], "test").unwrap();
        let whole = ends.iter().filter(|&&e| e <= cut).count();
        prop_assert_eq!(read.records.len(), whole);
        prop_assert_eq!(&read.records[..], &recs[..whole]);
        prop_assert!(read.valid_len <= cut);
    }

    #[test]
    fn filtering_partitions_the_store(
        docs in prop::collection::vec(words(), 1..25),
        weights in prop::collection::vec(-3.0..3.0f64, 64),
        bias in -1.0..1.0f64,
        t1 in 0.0..=1.0f64,
        t2 in 0.0..=1.0f64,
        workers in 1usize..6,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("c.jsonl");
        let lines: String = docs.iter().map(|d| serde_json::json!({"text": d}).to_string() + "\n").collect();
        std::fs::write(&corpus, lines).unwrap();
        let mut store = SnippetStore::open(&dir.path().join("store")).unwrap();
        store.ingest(&[corpus], IngestConfig { chunk_tokens: 4, tokenizer: Tokenizer::Whitespace }).unwrap();
        prop_assume!(!store.is_empty());
        let mut params = ScorerParams::zeros(FeatureSpace::hashed(64, 3));
        params.weights.copy_from_slice(&weights);
        params.bias = bias;

        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let a = apply_filter(&params, &store, lo, workers).unwrap();
        let b = apply_filter(&params, &store, hi, 1).unwrap();
        prop_assert_eq!(a.passed + a.failed, store.len());
        prop_assert_eq!(a.passed, a.pass_ids.len());
        let all: BTreeSet<u64> = store.index().iter().map(|e| e.id).collect();
        let pa: BTreeSet<u64> = a.pass_ids.iter().copied().collect();
        let pb: BTreeSet<u64> = b.pass_ids.iter().copied().collect();
        prop_assert!(pa.is_subset(&all));
        prop_assert!(pb.is_subset(&pa), "a higher threshold passes a subset");
        prop_assert_eq!(&a, &apply_filter(&params, &store, lo, 1).unwrap(), "worker count does not matter");
        prop_assert!(a.pass_ids.windows(2).all(|w| w[0] < w[1]));
    }
}
