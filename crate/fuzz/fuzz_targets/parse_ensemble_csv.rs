#![no_main]

use libfuzzer_sys::fuzz_target;
use loggas_core::io::{parse_ensemble_csv, write_ensemble_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(configs) = parse_ensemble_csv(text) {
        let mut buf = Vec::new();
        write_ensemble_csv(&mut buf, &configs, &[]).unwrap();
        let again = parse_ensemble_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(again, configs);
    }
});
