#![no_main]

use gos_core::export::read_trajectory_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = read_trajectory_csv(text) {
            let _ = table.function_ids();
        }
    }
});
