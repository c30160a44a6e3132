#![no_main]
use cmc_core::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_toml_with(text, &[]) {
            let again = RunConfig::from_toml_with(&cfg.to_toml(), &[]).expect("round trip");
            assert_eq!(again.hash(), cfg.hash());
        }
    }
});
