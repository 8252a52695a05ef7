#![no_main]

use libfuzzer_sys::fuzz_target;
use netoffload::partition::{apply_tag_rules, parse_tag_rules, CallGraph, ClassVertex};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(rules) = parse_tag_rules(text) else {
        return;
    };
    let vertices = ["a.b.C", "com.example.ui.Main", "x"]
        .map(ClassVertex::new)
        .to_vec();
    let g = CallGraph::new(vertices, std::iter::empty()).unwrap();
    let once = apply_tag_rules(&g, &rules);
    assert_eq!(apply_tag_rules(&g, &rules), once);
});
