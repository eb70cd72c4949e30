#![no_main]

use libfuzzer_sys::fuzz_target;
use prefalign::pipeline::dataset_io::{pairs_to_jsonl, parse_pairs_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(pairs) = parse_pairs_jsonl(text) {
        // Parsed values are already quantized, so a second cycle is exact.
        let again = parse_pairs_jsonl(&pairs_to_jsonl(&pairs)).unwrap();
        assert_eq!(pairs_to_jsonl(&again), pairs_to_jsonl(&pairs));
    }
});
