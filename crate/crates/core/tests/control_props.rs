use netoffload::control::{
    decide_none, decide_passive, decide_proactive, publish_load, AdmissionDecision,
    NeighborLoadTable, ProactiveContext,
};
use netoffload::topology::{generate_topology, GeneratorSpec, TopologyKind};
use netoffload::workload::EstimatorState;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn warm(gap: f64, exec: f64) -> EstimatorState {
    let mut est = EstimatorState::new(8).unwrap();
    for i in 1..=8 {
        est.record_arrival(i as f64 * gap).unwrap();
        est.record_completion(exec, 0.2, 0.0).unwrap();
    }
    est
}

fn grid() -> netoffload::topology::Topology {
    generate_topology(
        &GeneratorSpec::new(TopologyKind::Grid {
            width: 4,
            height: 3,
        }),
        0,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn none_never_forwards(load in 0.0f64..3.0, threshold in 0.1f64..2.0) {
        let d = decide_none(load, threshold);
        prop_assert!(!matches!(d, AdmissionDecision::ForwardTo(_)));
        prop_assert_eq!(d == AdmissionDecision::Execute, load < threshold);
    }

    #[test]
    fn passive_forwards_only_to_next_hop(node in 0usize..12, load in 0.0f64..3.0) {
        let t = grid();
        let id = t.nodes()[node].id;
        if id == t.server() {
            return Ok(());
        }
        if let AdmissionDecision::ForwardTo(to) = decide_passive(load, 1.0, id, &t) {
            prop_assert_eq!(to, t.next_hop_toward_server(id).unwrap());
            prop_assert!(to != t.server());
        }
    }

    #[test]
    fn proactive_stays_in_neighborhood(
        node in 0usize..12, loads in prop::collection::vec(0.0f64..2.0, 4),
        gap in 1e-4f64..1e-2, exec in 1e-4f64..1e-2, draw in 0.0f64..1.0, ttl in 0u32..4, load in 0.0f64..2.0,
    ) {
        let t = grid();
        let id = t.nodes()[node].id;
        let mut table = NeighborLoadTable::new();
        for (i, (n, _)) in t.neighbors(id).enumerate() {
            table.seed(n, loads[i % loads.len()]);
        }
        let ctx = ProactiveContext {
            cpu_capacity: 1.0, mem_capacity: 1.0, node_load: load, capacity_threshold: 1.0,
            ttl_remaining: ttl, forwarding: true,
        };
        match decide_proactive(&warm(gap, exec), &table, &ctx, draw) {
            AdmissionDecision::ForwardTo(to) => prop_assert!(t.link_delay(id, to).is_some()),
            d if ttl == 0 => prop_assert_eq!(d, decide_none(load, 1.0)),
            _ => {}
        }
    }

    #[test]
    fn gossip_reaches_exactly_the_neighbors(node in 0usize..12, now in 0.0f64..10.0) {
        let t = grid();
        let id = t.nodes()[node].id;
        let msgs = publish_load(&t, id, 0.5, now);
        prop_assert_eq!(msgs.len(), t.degree(id));
        for m in msgs {
            prop_assert!(m.deliver_at >= m.as_of);
            let delay = t.link_delay(id, m.to).unwrap() / 1000.0;
            prop_assert!((m.deliver_at - now - delay).abs() < 1e-12);
        }
    }
}

#[test]
fn execute_fraction_tracks_q() {
    let est = warm(1e-3, 2e-3);
    let q = est.execution_probability(1.0, 1.0);
    assert!(q > 0.05 && q < 0.95, "q = {q}");
    let table = NeighborLoadTable::new();
    let ctx = ProactiveContext {
        cpu_capacity: 1.0,
        mem_capacity: 1.0,
        node_load: 5.0,
        capacity_threshold: 1.0,
        ttl_remaining: 3,
        forwarding: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 200_000;
    let hits = (0..n)
        .filter(|_| {
            decide_proactive(&est, &table, &ctx, rng.random()) == AdmissionDecision::Execute
        })
        .count();
    let sigma = (q * (1.0 - q) / n as f64).sqrt();
    assert!((hits as f64 / n as f64 - q).abs() <= 3.0 * sigma);
}
