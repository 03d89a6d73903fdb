#![no_main]

use libfuzzer_sys::fuzz_target;
use std::str::FromStr;

use wplap::weights::WeightFunction;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        // Errors on malformed grammar are fine; panics are not.
        if let Ok(w) = WeightFunction::from_str(s) {
            // Anything accepted must round-trip through its display form.
            let shown = w.to_string();
            let again = WeightFunction::from_str(&shown).expect("display form re-parses");
            assert_eq!(shown, again.to_string());
        }
    }
});
