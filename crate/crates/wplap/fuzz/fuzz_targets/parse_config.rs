#![no_main]

use libfuzzer_sys::fuzz_target;

use wplap::config::parse_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        // Both the flat and the JSON path must reject bad input with an
        // error, never a panic.
        if let Ok(cfg) = parse_config(s) {
            // Accepted configs round-trip through their JSON form.
            let json = serde_json::to_string(&cfg).expect("accepted config serializes");
            let back = parse_config(&json).expect("serialized form re-parses");
            assert_eq!(json, serde_json::to_string(&back).unwrap());
        }
    }
});
