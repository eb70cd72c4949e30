#![no_main]

use libfuzzer_sys::fuzz_target;
use prefalign::toymodels::checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = checkpoint::decode(data) {
        let bytes = checkpoint::encode(&model);
        assert_eq!(checkpoint::decode(&bytes).unwrap(), model);
    }
});
