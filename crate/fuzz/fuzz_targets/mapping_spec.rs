#![no_main]
use cmc_core::model::MappingSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = MappingSpec::parse(text) {
            let again = MappingSpec::parse(&spec.to_text()).expect("round trip");
            assert_eq!(again, spec);
        }
    }
});
