#![no_main]

use annosvc::store::parse_submit_body;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_submit_body(data);
});
