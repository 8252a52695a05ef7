#![no_main]

use libfuzzer_sys::fuzz_target;
use netoffload::partition::{build_call_graph, louvain_optimal};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(g) = build_call_graph(text) else {
        return;
    };
    let json = g.to_json();
    assert_eq!(build_call_graph(&json).unwrap().to_json(), json);
    if g.len() <= 64 && !g.is_empty() {
        let set = louvain_optimal(&g).unwrap();
        assert!(set.modularity >= 0.0 && set.modularity <= 1.0);
    }
});
