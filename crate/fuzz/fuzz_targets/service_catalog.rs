#![no_main]

use libfuzzer_sys::fuzz_target;
use netoffload::workload::{parse_service_catalog, popularity};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(services) = parse_service_catalog(text) else {
        return;
    };
    let p = popularity(&services).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
});
