#![no_main]

use gos_core::config::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = ExperimentConfig::from_toml_str(text) {
            let _ = config.validate();
            let _ = config.growth_seq();
            let _ = config.test_functions();
        }
    }
});
