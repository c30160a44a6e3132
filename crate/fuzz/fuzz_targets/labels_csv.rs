#![no_main]
use cmc_core::volume::parse_labels_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(records) = parse_labels_csv(text, std::path::Path::new("/data")) {
            assert!(records.iter().all(|r| r.label < 2 && r.path.starts_with("/data")));
        }
    }
});
