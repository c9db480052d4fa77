#![no_main]

use libfuzzer_sys::fuzz_target;
use loggas_core::io::{configuration_to_json, parse_configuration_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = parse_configuration_json(text) {
        assert!(c.points().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(parse_configuration_json(&configuration_to_json(&c)).unwrap(), c);
    }
});
