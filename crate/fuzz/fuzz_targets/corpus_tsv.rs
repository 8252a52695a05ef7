#![no_main]

use libfuzzer_sys::fuzz_target;
use netoffload::appstats::{parse_corpus, unique_class_fraction, write_corpus};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(c) = parse_corpus(text) else { return };
    assert_eq!(parse_corpus(&write_corpus(&c)).unwrap(), c);
    for depth in 1..=6 {
        if let Ok(r) = unique_class_fraction(&c, depth) {
            assert!(r
                .per_app_unique_fraction
                .values()
                .all(|f| (0.0..=100.0).contains(f)));
        }
    }
});
