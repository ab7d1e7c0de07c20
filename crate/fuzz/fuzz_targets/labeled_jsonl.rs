#![no_main]

use libfuzzer_sys::fuzz_target;
use sieve_core::distiller::LabeledRecord;
use sieve_core::jsonl::parse_jsonl;

fuzz_target!(|data: &[u8]| {
    if let Ok(read) = parse_jsonl::<LabeledRecord>(data, "fuzz") {
        assert!(read.valid_len <= data.len());
        // Re-parsing the accepted prefix yields the same records.
        let again = parse_jsonl::<LabeledRecord>(&data[..read.valid_len], "fuzz").expect("prefix parses");
        assert_eq!(again.records, read.records);
    }
});
