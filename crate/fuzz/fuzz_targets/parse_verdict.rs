#![no_main]

use libfuzzer_sys::fuzz_target;
use sieve_core::oracle::{parse_verdict, PromptTemplate, TemplateName};

fuzz_target!(|data: &[u8]| {
    let Ok(raw) = std::str::from_utf8(data) else { return };
    for name in TemplateName::BUILTIN {
        let template = PromptTemplate::builtin(name).expect("built-in template");
        if let Ok(label) = parse_verdict(raw, &template) {
            // A verdict is only ever read from a PASS/FAIL word.
            let lower = raw.to_ascii_lowercase();
            assert!(lower.contains("pass") || lower.contains("fail"));
            let _ = label;
        }
    }
});
