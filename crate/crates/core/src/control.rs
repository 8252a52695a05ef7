//! Per-node admission strategies and one-hop load exchange.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::topology::{NodeId, Topology};
use crate::workload::EstimatorState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Execute until overloaded, then drop.
    None,
    /// Execute until overloaded, then pass toward the server.
    Passive,
    /// Probabilistic admission with forwarding to the lightest neighbor.
    Proactive,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::None,
        StrategyKind::Passive,
        StrategyKind::Proactive,
    ];
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::None => "none",
            StrategyKind::Passive => "passive",
            StrategyKind::Proactive => "proactive",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(StrategyKind::None),
            "passive" => Ok(StrategyKind::Passive),
            "proactive" => Ok(StrategyKind::Proactive),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmissionDecision {
    Execute,
    ForwardTo(NodeId),
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborLoad {
    /// Fraction of the neighbor's CPU capacity in use.
    pub load: f64,
    /// Seconds.
    pub as_of: f64,
}

/// Last known load of each one-hop neighbor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborLoadTable {
    entries: BTreeMap<NodeId, NeighborLoad>,
}

impl NeighborLoadTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, node: NodeId) -> Option<NeighborLoad> {
        self.entries.get(&node).copied()
    }

    /// Stores a report unless an equally fresh or newer one is present.
    /// Returns whether the table changed.
    pub fn update(&mut self, node: NodeId, load: f64, as_of: f64) -> bool {
        match self.entries.get(&node) {
            Some(e) if e.as_of >= as_of => false,
            _ => {
                self.entries.insert(node, NeighborLoad { load, as_of });
                true
            }
        }
    }

    /// Registers a neighbor with an initial reading, overwriting nothing.
    pub fn seed(&mut self, node: NodeId, load: f64) {
        self.entries.entry(node).or_insert(NeighborLoad {
            load,
            as_of: f64::NEG_INFINITY,
        });
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, NeighborLoad)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }
}

/// Neighbor with the minimum reported load; ties go to the lowest id.
/// `None` when the table is empty.
pub fn lightest_load_neighbor(table: &NeighborLoadTable) -> Option<NodeId> {
    let mut best: Option<(NodeId, f64)> = None;
    for (id, e) in table.iter() {
        match best {
            Some((_, l)) if e.load >= l => {}
            _ => best = Some((id, e.load)),
        }
    }
    best.map(|(id, _)| id)
}

/// Overloaded means load at or above the threshold.
pub fn decide_none(node_load: f64, capacity_threshold: f64) -> AdmissionDecision {
    if node_load < capacity_threshold {
        AdmissionDecision::Execute
    } else {
        AdmissionDecision::Drop
    }
}

/// Executes while under the threshold; otherwise hands the request to the
/// next hop toward the server, or drops it at the last in-network hop.
pub fn decide_passive(
    node_load: f64,
    capacity_threshold: f64,
    node: NodeId,
    topology: &Topology,
) -> AdmissionDecision {
    if node_load < capacity_threshold {
        return AdmissionDecision::Execute;
    }
    match topology.next_hop_toward_server(node) {
        Ok(next) if next != topology.server() => AdmissionDecision::ForwardTo(next),
        _ => AdmissionDecision::Drop,
    }
}

/// Everything the proactive rule needs about the deciding node.
#[derive(Debug, Clone, Copy)]
pub struct ProactiveContext {
    pub cpu_capacity: f64,
    pub mem_capacity: f64,
    pub node_load: f64,
    pub capacity_threshold: f64,
    pub ttl_remaining: u32,
    /// When false, requests that are not admitted are dropped.
    pub forwarding: bool,
}

/// Executes with probability q (`rng_draw < q`), otherwise forwards to the
/// lightest neighbor. A request with no hops left, or with nowhere to go,
/// runs locally if the node is under its threshold and is dropped otherwise.
pub fn decide_proactive(
    state: &EstimatorState,
    neighbors: &NeighborLoadTable,
    ctx: &ProactiveContext,
    rng_draw: f64,
) -> AdmissionDecision {
    let fallback = || decide_none(ctx.node_load, ctx.capacity_threshold);
    if ctx.ttl_remaining == 0 {
        return fallback();
    }
    let q = state.execution_probability(ctx.cpu_capacity, ctx.mem_capacity);
    if rng_draw < q {
        return AdmissionDecision::Execute;
    }
    if !ctx.forwarding {
        return AdmissionDecision::Drop;
    }
    match lightest_load_neighbor(neighbors) {
        Some(n) => AdmissionDecision::ForwardTo(n),
        None => fallback(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GossipMessage {
    pub from: NodeId,
    pub to: NodeId,
    pub load: f64,
    /// Seconds; the publication time.
    pub as_of: f64,
    /// Seconds; publication time plus the link delay.
    pub deliver_at: f64,
}

/// Load reports from `node` to each of its one-hop neighbors.
pub fn publish_load(topology: &Topology, node: NodeId, load: f64, now: f64) -> Vec<GossipMessage> {
    topology
        .neighbors(node)
        .map(|(to, delay_ms)| GossipMessage {
            from: node,
            to,
            load,
            as_of: now,
            deliver_at: now + delay_ms / 1000.0,
        })
        .collect()
}
