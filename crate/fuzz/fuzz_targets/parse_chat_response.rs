#![no_main]

use libfuzzer_sys::fuzz_target;
use sieve_core::oracle::parse_chat_response;

fuzz_target!(|data: &[u8]| {
    if let Ok(body) = std::str::from_utf8(data) {
        let _ = parse_chat_response(body);
    }
});
