#![no_main]

use gos_core::export::ResultsFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(file) = ResultsFile::from_json(text) {
            let _ = file.summary_table();
        }
    }
});
