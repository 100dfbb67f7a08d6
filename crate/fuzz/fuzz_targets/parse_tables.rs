#![no_main]

use libfuzzer_sys::fuzz_target;
use roughflow::datastore::{parse_collocation, parse_dataset};

// First byte picks the table kind.
fuzz_target!(|data: &[u8]| {
    let Some((&kind, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    if kind & 1 == 0 {
        let _ = parse_dataset(text);
    } else {
        let _ = parse_collocation(text);
    }
});
