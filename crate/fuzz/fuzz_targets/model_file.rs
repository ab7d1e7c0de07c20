#![no_main]

use libfuzzer_sys::fuzz_target;
use sieve_core::scorer::ScorerParams;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(params) = ScorerParams::from_model_str(text) {
        // Anything accepted survives a write/read cycle unchanged.
        let again = ScorerParams::from_model_str(&params.to_model_string()).expect("round trip");
        assert_eq!(again.to_model_string(), params.to_model_string());
    }
});
