//! Runtime offloading decisions for partitioned apps.
//!
//! A class is worth offloading when the expected local running time of its
//! methods, weighted by invocation frequency, exceeds the remote time plus
//! the network cost of the methods that cross the partition boundary. The
//! energy rule compares local energy with the transfer and waiting energy
//! of the boundary methods.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partition::{CallGraph, MethodProfile, PartitionSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecisionError {
    #[error("rtt must be a non-negative number of seconds, got {0}")]
    Rtt(f64),
    #[error("bandwidth must be positive, got {0}")]
    Bandwidth(f64),
    #[error("cpu speedup must be positive, got {0}")]
    Speedup(f64),
    #[error("energy coefficients must be non-negative")]
    Energy,
    #[error("malformed energy model: {0}")]
    Parse(String),
    #[error("latency sample must be a non-negative number of seconds, got {0}")]
    Sample(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConditions {
    /// Seconds.
    pub rtt: f64,
    /// Bytes per second.
    pub bandwidth: f64,
    /// Remote over local CPU speed.
    pub cpu_speedup: f64,
}

impl NetworkConditions {
    pub fn new(rtt: f64, bandwidth: f64, cpu_speedup: f64) -> Result<Self, DecisionError> {
        if !(rtt >= 0.0) || !rtt.is_finite() {
            return Err(DecisionError::Rtt(rtt));
        }
        if !(bandwidth > 0.0) {
            return Err(DecisionError::Bandwidth(bandwidth));
        }
        if !(cpu_speedup > 0.0) || !cpu_speedup.is_finite() {
            return Err(DecisionError::Speedup(cpu_speedup));
        }
        Ok(Self {
            rtt,
            bandwidth,
            cpu_speedup,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    /// Joules per transmitted byte.
    pub energy_per_tx_byte: f64,
    /// Joules per received byte.
    pub energy_per_rx_byte: f64,
    /// Joules per second spent waiting for a remote result.
    #[serde(default)]
    pub energy_idle_per_second: f64,
}

impl EnergyModel {
    pub fn validate(&self) -> Result<(), DecisionError> {
        let ok = |x: f64| x >= 0.0 && x.is_finite();
        if ok(self.energy_per_tx_byte)
            && ok(self.energy_per_rx_byte)
            && ok(self.energy_idle_per_second)
        {
            Ok(())
        } else {
            Err(DecisionError::Energy)
        }
    }
}

pub fn parse_energy_model(source: &str) -> Result<EnergyModel, DecisionError> {
    let m: EnergyModel =
        serde_json::from_str(source).map_err(|e| DecisionError::Parse(e.to_string()))?;
    m.validate()?;
    Ok(m)
}

/// A class's methods and, per method, whether it crosses the boundary of
/// the candidate partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProfile {
    pub name: String,
    pub methods: Vec<MethodProfile>,
    pub boundary: Vec<bool>,
}

impl ClassProfile {
    /// Normalized invocation frequencies, or `None` when the class has no
    /// methods or no recorded invocations.
    pub fn frequencies(&self) -> Option<Vec<f64>> {
        let total: u64 = self.methods.iter().map(|m| m.invocations).sum();
        if self.methods.is_empty() || total == 0 || self.boundary.len() != self.methods.len() {
            return None;
        }
        Some(
            self.methods
                .iter()
                .map(|m| m.invocations as f64 / total as f64)
                .collect(),
        )
    }
}

fn offload_time(m: &MethodProfile, cond: &NetworkConditions) -> f64 {
    m.t_local_ms / 1000.0 / m.cpu_scale.unwrap_or(cond.cpu_speedup)
}

fn transfer_time(m: &MethodProfile, cond: &NetworkConditions) -> f64 {
    (m.in_bytes + m.out_bytes) / cond.bandwidth
}

/// True iff the expected local time strictly exceeds the expected offload
/// time. Network terms apply to boundary methods only.
pub fn class_valid_time(profile: &ClassProfile, cond: &NetworkConditions) -> bool {
    let Some(f) = profile.frequencies() else {
        return false;
    };
    let mut local = 0.0;
    let mut remote = 0.0;
    for ((m, &b), f) in profile.methods.iter().zip(&profile.boundary).zip(f) {
        local += f * m.t_local_ms / 1000.0;
        let net = if b {
            cond.rtt + transfer_time(m, cond)
        } else {
            0.0
        };
        remote += f * (net + offload_time(m, cond));
    }
    local > remote
}

/// True iff the local energy strictly exceeds the energy of shipping and
/// awaiting the boundary methods.
pub fn class_valid_energy(
    profile: &ClassProfile,
    cond: &NetworkConditions,
    model: &EnergyModel,
) -> bool {
    let Some(f) = profile.frequencies() else {
        return false;
    };
    let mut local = 0.0;
    let mut offload = 0.0;
    for ((m, &b), f) in profile.methods.iter().zip(&profile.boundary).zip(f) {
        local += f * m.energy_mj / 1000.0;
        if b {
            let wait = cond.rtt + transfer_time(m, cond) + offload_time(m, cond);
            offload += f
                * (m.in_bytes * model.energy_per_tx_byte
                    + m.out_bytes * model.energy_per_rx_byte
                    + wait * model.energy_idle_per_second);
        }
    }
    local > offload
}

/// How many clusters of a set must pass for the set to count as valid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetMode {
    /// At least one offloadable cluster passes.
    #[default]
    Any,
    /// Every offloadable cluster passes.
    All,
}

/// Profile of class `v` when `cluster` is offloaded: a class with a call
/// edge leaving the cluster has all of its methods on the boundary.
pub fn class_profile(graph: &CallGraph, v: usize, cluster: &[usize]) -> ClassProfile {
    let crosses = graph
        .neighbors(v)
        .iter()
        .any(|&(u, _)| cluster.binary_search(&u).is_err());
    let c = &graph.vertices()[v];
    ClassProfile {
        name: c.name.clone(),
        methods: c.methods.clone(),
        boundary: vec![crosses; c.methods.len()],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassValidity {
    pub class: String,
    pub cluster: usize,
    pub offloadable: bool,
    pub time_valid: bool,
    /// `None` when no energy model was supplied.
    pub energy_valid: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Number of clusters of the chosen set; `None` means run locally.
    pub chosen_n: Option<usize>,
    /// True when the chosen set is the one-class-per-cluster fallback.
    pub per_class_fallback: bool,
    /// Indices into the chosen set's clusters.
    pub offload_clusters: Vec<usize>,
    pub offload_classes: Vec<String>,
    /// Validity of every class in the last evaluated set.
    pub per_class_validity: Vec<ClassValidity>,
}

impl Verdict {
    pub fn is_local_only(&self) -> bool {
        self.chosen_n.is_none()
    }
}

struct Evaluation {
    passing: Vec<usize>,
    valid: bool,
    per_class: Vec<ClassValidity>,
}

fn evaluate_set(
    graph: &CallGraph,
    set: &PartitionSet,
    cond: &NetworkConditions,
    model: Option<&EnergyModel>,
    mode: SetMode,
) -> Evaluation {
    let mut passing = Vec::new();
    let mut per_class = Vec::new();
    let mut candidates = 0;
    for (ci, cluster) in set.clusters.iter().enumerate() {
        let offloadable = set.offloadable[ci];
        let mut sorted = cluster.clone();
        sorted.sort_unstable();
        let mut all_pass = true;
        for &v in cluster {
            let p = class_profile(graph, v, &sorted);
            let time_valid = class_valid_time(&p, cond);
            let energy_valid = model.map(|m| class_valid_energy(&p, cond, m));
            all_pass &= time_valid && energy_valid.unwrap_or(true);
            per_class.push(ClassValidity {
                class: p.name,
                cluster: ci,
                offloadable,
                time_valid,
                energy_valid,
            });
        }
        if offloadable {
            candidates += 1;
            if all_pass {
                passing.push(ci);
            }
        }
    }
    let valid = match mode {
        SetMode::Any => !passing.is_empty(),
        SetMode::All => candidates > 0 && passing.len() == candidates,
    };
    Evaluation {
        passing,
        valid,
        per_class,
    }
}

/// Walks the sets in ascending cluster count and returns the first valid
/// one, then tries one cluster per class, then settles for local-only
/// execution. Without an energy model only the time rule applies.
pub fn select_partition(
    sets: &[PartitionSet],
    graph: &CallGraph,
    cond: &NetworkConditions,
    model: Option<&EnergyModel>,
    mode: SetMode,
) -> Verdict {
    let chosen = |set: &PartitionSet, ev: Evaluation, fallback: bool| Verdict {
        chosen_n: Some(set.n_clusters),
        per_class_fallback: fallback,
        offload_classes: ev
            .passing
            .iter()
            .flat_map(|&c| {
                set.clusters[c]
                    .iter()
                    .map(|&v| graph.vertices()[v].name.clone())
            })
            .collect(),
        offload_clusters: ev.passing,
        per_class_validity: ev.per_class,
    };
    for set in sets {
        let ev = evaluate_set(graph, set, cond, model, mode);
        if ev.valid {
            return chosen(set, ev, false);
        }
    }
    let Ok(singletons) =
        PartitionSet::from_clusters(graph, (0..graph.len()).map(|v| vec![v]).collect())
    else {
        unreachable!("singletons always partition the graph")
    };
    let ev = evaluate_set(graph, &singletons, cond, model, mode);
    if ev.valid && !graph.is_empty() {
        return chosen(&singletons, ev, true);
    }
    Verdict {
        chosen_n: None,
        per_class_fallback: false,
        offload_clusters: Vec::new(),
        offload_classes: Vec::new(),
        per_class_validity: ev.per_class,
    }
}

/// Rolling window over the last three observed round-trip times.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyWindow {
    samples: VecDeque<f64>,
    last_update: Option<f64>,
}

impl LatencyWindow {
    pub const CAPACITY: usize = 3;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn samples(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().copied()
    }

    pub fn last_update(&self) -> Option<f64> {
        self.last_update
    }

    /// Mean of the stored samples, seconds.
    pub fn estimate(&self) -> Option<f64> {
        if self.samples.is_empty() {
            None
        } else {
            Some(self.samples.iter().sum::<f64>() / self.samples.len() as f64)
        }
    }
}

pub fn update_latency_window(
    mut window: LatencyWindow,
    sample_rtt: f64,
    now: f64,
) -> Result<LatencyWindow, DecisionError> {
    if !(sample_rtt >= 0.0) || !sample_rtt.is_finite() {
        return Err(DecisionError::Sample(sample_rtt));
    }
    if window.samples.len() == LatencyWindow::CAPACITY {
        window.samples.pop_front();
    }
    window.samples.push_back(sample_rtt);
    window.last_update = Some(now);
    Ok(window)
}
