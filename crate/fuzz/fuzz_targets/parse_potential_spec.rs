#![no_main]

use libfuzzer_sys::fuzz_target;
use loggas_core::potentials::{parse_potential_spec, PotentialSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = parse_potential_spec(text) else { return };
    // building may reject the spec, but never panics
    if let Ok(pot) = spec.build() {
        let back = PotentialSpec::from_potential(&pot);
        assert_eq!(back.kind, spec.kind);
        assert_eq!(back.r, spec.r);
    }
});
