#![no_main]

use libfuzzer_sys::fuzz_target;
use netoffload::decision::parse_energy_model;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = parse_energy_model(text) {
        assert!(m.validate().is_ok());
    }
});
