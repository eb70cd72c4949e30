#![no_main]

use libfuzzer_sys::fuzz_target;
use prefalign::pipeline::dataset_io::{corpus_to_jsonl, parse_corpus_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(corpus) = parse_corpus_jsonl(text) {
        assert_eq!(parse_corpus_jsonl(&corpus_to_jsonl(&corpus)).unwrap(), corpus);
    }
});
