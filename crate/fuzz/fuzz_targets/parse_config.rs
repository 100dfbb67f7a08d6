#![no_main]

use libfuzzer_sys::fuzz_target;
use roughflow::datastore::{parse_config, serialize};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = parse_config(text) {
        // Anything accepted must survive its canonical form unchanged.
        let again = parse_config(&serialize(&cfg)).expect("canonical form reparses");
        assert_eq!(again, cfg);
    }
});
