#![no_main]
use cmc_core::mixing::{decode_worker_message, encode_worker_message};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(msg) = decode_worker_message(data) {
        assert_eq!(encode_worker_message(&msg), data);
    }
});
