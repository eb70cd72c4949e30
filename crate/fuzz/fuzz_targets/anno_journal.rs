#![no_main]

use annosvc::journal::parse_journal;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok((entries, consumed)) = parse_journal(&text) {
        assert!(consumed <= text.len());
        let rewritten: String = entries.iter().map(|e| e.to_line()).collect();
        assert_eq!(parse_journal(&rewritten).unwrap().0, entries);
    }
});
