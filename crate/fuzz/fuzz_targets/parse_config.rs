#![no_main]

use libfuzzer_sys::fuzz_target;
use loggas_cli::config::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_config(text) {
        // accepted configs hash deterministically
        assert_eq!(cfg.hash(), cfg.clone().hash());
    }
});
