//! Replays the checked-in fuzz corpus through the same invariants the fuzz
//! targets assert, so the seeds stay meaningful under stable toolchains.

use std::path::{Path, PathBuf};

use cmc_core::config::RunConfig;
use cmc_core::mixing::{decode_worker_message, encode_worker_message};
use cmc_core::model::{Checkpoint, MappingSpec};
use cmc_core::volume::{decode_slice, parse_labels_csv, Manifest};

fn corpus(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus for {target}");
    files.into_iter().map(|p| (p.clone(), std::fs::read(&p).unwrap())).collect()
}

/// Count of seeds the parser accepts; every corpus holds valid and invalid seeds.
fn accepted(target: &str, check: impl Fn(&[u8]) -> bool) -> usize {
    let seeds = corpus(target);
    let n = seeds.iter().filter(|(_, bytes)| check(bytes)).count();
    assert!(n > 0 && n < seeds.len(), "{target}: {n} of {} seeds accepted", seeds.len());
    n
}

#[test]
fn checkpoint_decode() {
    accepted("checkpoint_decode", |data| match Checkpoint::decode(data) {
        Ok(ckpt) => {
            let again = Checkpoint::decode(&ckpt.encode()).unwrap();
            assert_eq!(again.tensors, ckpt.tensors);
            true
        }
        Err(_) => false,
    });
}

#[test]
fn worker_message() {
    accepted("worker_message", |data| match decode_worker_message(data) {
        Ok(msg) => {
            assert_eq!(encode_worker_message(&msg), data);
            true
        }
        Err(_) => false,
    });
}

#[test]
fn labels_csv() {
    accepted("labels_csv", |data| {
        let text = std::str::from_utf8(data).unwrap();
        match parse_labels_csv(text, Path::new("/data")) {
            Ok(records) => {
                assert!(records.iter().all(|r| r.label < 2 && r.path.starts_with("/data")));
                true
            }
            Err(_) => false,
        }
    });
}

#[test]
fn manifest_parse() {
    accepted("manifest_parse", |data| match Manifest::parse(std::str::from_utf8(data).unwrap()) {
        Ok(m) => {
            assert_eq!(Manifest::parse(&m.to_csv()).unwrap(), m);
            true
        }
        Err(_) => false,
    });
}

#[test]
fn mapping_spec() {
    accepted("mapping_spec", |data| match MappingSpec::parse(std::str::from_utf8(data).unwrap()) {
        Ok(spec) => {
            assert_eq!(MappingSpec::parse(&spec.to_text()).unwrap(), spec);
            true
        }
        Err(_) => false,
    });
}

#[test]
fn run_config() {
    accepted("run_config", |data| match RunConfig::from_toml_with(std::str::from_utf8(data).unwrap(), &[]) {
        Ok(cfg) => {
            assert_eq!(RunConfig::from_toml_with(&cfg.to_toml(), &[]).unwrap().hash(), cfg.hash());
            true
        }
        Err(_) => false,
    });
}

#[test]
fn slice_decode() {
    accepted("slice_decode", |data| decode_slice(data).is_ok());
}
