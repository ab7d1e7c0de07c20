#![no_main]

use libfuzzer_sys::fuzz_target;
use sieve_core::oracle::ReplayStore;

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = ReplayStore::parse(data) {
        for (id, rec) in &map {
            assert_eq!(*id, rec.id);
        }
    }
});
