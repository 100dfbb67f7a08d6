#![no_main]

use libfuzzer_sys::fuzz_target;
use roughflow::datastore::{decode_snapshot, encode_snapshot};

fuzz_target!(|data: &[u8]| {
    if let Ok((snap, hash)) = decode_snapshot(data) {
        assert_eq!(encode_snapshot(&snap, hash), data);
    }
});
