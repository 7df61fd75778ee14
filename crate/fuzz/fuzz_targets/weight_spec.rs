#![no_main]

use gos_core::weights::WeightDist;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(dist) = WeightDist::parse(text) {
            // whatever parses must print back to an equal law
            let again = WeightDist::parse(&dist.to_string()).expect("display output must parse");
            assert_eq!(again, dist);
        }
    }
});
