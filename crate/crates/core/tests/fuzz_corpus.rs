//! Replays the checked-in fuzz corpus through the same properties the fuzz
//! targets check, so the seeds stay meaningful on stable toolchains.

use std::fs;
use std::path::PathBuf;

use roughflow::datastore::{
    decode_checkpoint, decode_snapshot, encode_checkpoint, encode_manifest, encode_snapshot,
    parse_collocation, parse_config, parse_dataset, parse_manifest, parse_model_sidecar, serialize,
};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn config_seeds() {
    let mut accepted = 0;
    for (name, bytes) in seeds("parse_config") {
        if let Ok(cfg) = parse_config(text(&bytes)) {
            accepted += 1;
            assert_eq!(parse_config(&serialize(&cfg)).unwrap(), cfg, "{name}");
        }
    }
    assert!(accepted >= 2);
}

#[test]
fn snapshot_seeds() {
    let mut accepted = 0;
    for (name, bytes) in seeds("decode_snapshot") {
        if let Ok((s, h)) = decode_snapshot(&bytes) {
            accepted += 1;
            assert_eq!(encode_snapshot(&s, h), bytes, "{name}");
        }
    }
    assert_eq!(accepted, 2);
}

#[test]
fn checkpoint_seeds() {
    let mut accepted = 0;
    for (name, bytes) in seeds("decode_checkpoint") {
        if let Ok(ck) = decode_checkpoint(&bytes) {
            accepted += 1;
            assert_eq!(encode_checkpoint(&ck), bytes, "{name}");
        }
    }
    assert_eq!(accepted, 2);
}

#[test]
fn manifest_seeds() {
    let mut accepted = 0;
    for (name, bytes) in seeds("parse_manifest") {
        if let Ok(m) = parse_manifest(text(&bytes)) {
            accepted += 1;
            assert_eq!(parse_manifest(&encode_manifest(&m)).unwrap(), m, "{name}");
        }
    }
    assert_eq!(accepted, 2);
}

#[test]
fn sidecar_seeds() {
    let results: Vec<bool> = seeds("parse_model_sidecar")
        .iter()
        .map(|(_, b)| parse_model_sidecar(text(b)).is_ok())
        .collect();
    assert_eq!(results, [false, true]);
}

#[test]
fn table_seeds() {
    let mut accepted = 0;
    for (_, bytes) in seeds("parse_tables") {
        let (kind, rest) = bytes.split_first().unwrap();
        let t = text(rest);
        let ok = if kind & 1 == 0 {
            parse_dataset(t).is_ok()
        } else {
            parse_collocation(t).is_ok()
        };
        accepted += ok as usize;
    }
    assert_eq!(accepted, 2);
}
