#![no_main]
use cmc_core::volume::decode_slice;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = decode_slice(data);
});
