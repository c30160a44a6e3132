#![no_main]
use cmc_core::model::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::decode(data) {
        // Whatever decodes must re-encode to something that decodes identically.
        let again = Checkpoint::decode(&ckpt.encode()).expect("re-encoded checkpoint decodes");
        assert_eq!(again.tensors.len(), ckpt.tensors.len());
    }
});
