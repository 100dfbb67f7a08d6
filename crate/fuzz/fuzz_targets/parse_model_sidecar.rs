#![no_main]

use libfuzzer_sys::fuzz_target;
use roughflow::datastore::parse_model_sidecar;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_model_sidecar(text);
    }
});
