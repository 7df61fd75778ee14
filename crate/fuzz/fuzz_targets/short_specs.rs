#![no_main]

use gos_core::measure::TestFunction;
use gos_core::stats::GrowthSeq;
use gos_core::weights::DeterministicSeq;
use libfuzzer_sys::fuzz_target;

// Test-function ids, growth sequences and deterministic r sequences share
// the `name:args` shape.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(f) = TestFunction::parse(text) {
            let _ = f.eval(0.5);
        }
        if let Ok(g) = GrowthSeq::parse(text) {
            let _ = g.value(1);
        }
        if let Ok(s) = DeterministicSeq::parse(text) {
            let _ = DeterministicSeq::parse(&s.to_string());
        }
    }
});
