use netoffload::control::StrategyKind;
use netoffload::simulator::{
    preset_overload_line, run_scenario, ScenarioConfig, StrategyConfig, TopologySource,
};
use netoffload::topology::{GeneratorSpec, TopologyKind};
use proptest::prelude::*;

fn scenario(kind: TopologyKind, strategy: StrategyKind, mult: f64, seed: u64) -> ScenarioConfig {
    let mut cfg = preset_overload_line();
    cfg.topology = TopologySource::Generate(GeneratorSpec::new(kind));
    cfg.strategy = StrategyConfig {
        k: 16,
        ..StrategyConfig::new(strategy)
    };
    cfg.load_multiplier = mult;
    cfg.horizon = 0.4;
    cfg.warmup = Some(0.05);
    cfg.seed = seed;
    cfg
}

fn kinds() -> impl Strategy<Value = TopologyKind> {
    prop_oneof![
        (2usize..6).prop_map(|n| TopologyKind::Line { n }),
        (2usize..4, 2usize..4).prop_map(|(width, height)| TopologyKind::Grid { width, height }),
        (2usize..3, 1usize..3)
            .prop_map(|(branching, depth)| TopologyKind::Tree { branching, depth }),
    ]
}

fn strategies() -> impl Strategy<Value = StrategyKind> {
    prop::sample::select(StrategyKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_request_is_settled_once(kind in kinds(), s in strategies(), mult in 0.5f64..8.0, seed in any::<u64>()) {
        let m = run_scenario(&scenario(kind, s, mult, seed)).unwrap();
        prop_assert_eq!(m.executed + m.dropped, m.total);
        prop_assert!(m.executed_at_server <= m.executed);
        prop_assert!((0.0..=1.0).contains(&m.psi));
        prop_assert!(m.tau >= 0.0);
        if m.executed > 0 {
            prop_assert!(m.phi_ms >= 0.0);
        }
        let node_total: u64 = m.per_node.iter().map(|n| n.executed).sum();
        prop_assert_eq!(node_total + m.executed_at_server, m.executed);
    }

    #[test]
    fn runs_are_deterministic(kind in kinds(), s in strategies(), seed in any::<u64>()) {
        let cfg = scenario(kind, s, 4.0, seed);
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn config_json_round_trips(kind in kinds(), s in strategies(), mult in 0.5f64..8.0, seed in any::<u64>()) {
        let cfg = scenario(kind, s, mult, seed);
        let back = ScenarioConfig::from_json(&cfg.to_json(), None).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
