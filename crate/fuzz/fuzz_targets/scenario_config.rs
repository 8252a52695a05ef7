#![no_main]

use libfuzzer_sys::fuzz_target;
use netoffload::simulator::{ScenarioConfig, TopologySource};
use netoffload::topology::TopologyKind;

fn small(cfg: &ScenarioConfig) -> bool {
    match &cfg.topology {
        TopologySource::Generate(g) => match g.kind {
            TopologyKind::Line { n } | TopologyKind::ScaleFree { n, .. } => n <= 4096,
            TopologyKind::Grid { width, height } => width.saturating_mul(height) <= 4096,
            TopologyKind::Tree { branching, depth } => branching <= 8 && depth <= 4,
        },
        TopologySource::File(_) => false,
        TopologySource::EdgeList(text) => text.len() <= 1 << 16,
    }
}

fuzz_target!(|data: &[u8]| {
    // Parse without resolving file references so the target never reads
    // the filesystem.
    let Ok(cfg) = serde_json::from_slice::<ScenarioConfig>(data) else {
        return;
    };
    if cfg.service_catalog.is_some() || !small(&cfg) {
        return;
    }
    if cfg.validate().is_ok() {
        assert_eq!(
            ScenarioConfig::from_json(&cfg.to_json(), None).unwrap(),
            cfg
        );
    }
});
