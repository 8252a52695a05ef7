#![no_main]

use libfuzzer_sys::fuzz_target;
use netoffload::topology::{load_topology, write_topology};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(t) = load_topology(text) else { return };
    let out = write_topology(&t);
    let again = load_topology(&out).expect("written topology reloads");
    assert_eq!(write_topology(&again), out);
    for n in t.nodes() {
        if n.id != t.server() {
            let next = t.next_hop_toward_server(n.id).unwrap();
            assert!(t.link_delay(n.id, next).is_some());
        }
    }
});
