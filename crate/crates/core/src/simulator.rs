//! Deterministic discrete-event simulation of in-network function execution.
//!
//! Requests enter at access points, are admitted, forwarded or dropped by the
//! configured strategy, and run on the admitting node. Each node is a single
//! processor-sharing CPU: concurrently running services share it equally, so
//! the number of services in a node follows the M/M/1 birth-death process
//! that the proactive estimator assumes. A node's normalized load is the sum
//! of the CPU cost of its running services over its CPU capacity.
//!
//! Runs are single threaded and a pure function of the configuration. The
//! arrival stream, per-request attributes and admission draws come from
//! three independent random streams so that strategies compared under the
//! same seed see identical traffic.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    decide_none, decide_passive, decide_proactive, publish_load, AdmissionDecision,
    NeighborLoadTable, ProactiveContext, StrategyKind,
};
use crate::topology::{
    generate_topology, load_topology, GeneratorSpec, NodeId, Topology, TopologyError, TopologyKind,
};
use crate::workload::{
    poisson_stream, validate_catalog, EstimatorState, JitterSpec, ServiceSpec, WorkloadError,
    DEFAULT_BUFFER_LEN,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl SimError {
    /// True for errors caused by the scenario itself rather than the
    /// environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, SimError::Io { .. })
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, SimError> {
    Err(SimError::Config(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologySource {
    Generate(GeneratorSpec),
    /// Path to an edge-list file.
    File(PathBuf),
    /// Edge-list text embedded in the config.
    EdgeList(String),
}

fn default_k() -> usize {
    DEFAULT_BUFFER_LEN
}
fn one_ms() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Circular-buffer length of the proactive estimator.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Forwarding budget of proactive requests; twice the network diameter
    /// when unset.
    #[serde(default)]
    pub ttl: Option<u32>,
    /// Load heartbeat period; 0 disables the heartbeat.
    #[serde(default = "one_ms")]
    pub gossip_period_ms: f64,
    #[serde(default = "yes")]
    pub gossip_on_completion: bool,
    /// Proactive only: when false, requests that are not admitted are
    /// dropped instead of forwarded.
    #[serde(default = "yes")]
    pub forwarding: bool,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            k: DEFAULT_BUFFER_LEN,
            ttl: None,
            gossip_period_ms: 1.0,
            gossip_on_completion: true,
            forwarding: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub topology: TopologySource,
    #[serde(default)]
    pub services: Vec<ServiceSpec>,
    /// JSON service catalog; merged after `services`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_catalog: Option<PathBuf>,
    /// Total request rate per second across all access points.
    pub base_rate: f64,
    #[serde(default = "unit")]
    pub load_multiplier: f64,
    #[serde(default)]
    pub jitters: Vec<JitterSpec>,
    pub strategy: StrategyConfig,
    /// Seconds.
    pub horizon: f64,
    /// Seconds excluded from metrics; 10% of the horizon when unset.
    #[serde(default)]
    pub warmup: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Load sampling cadence; 0 disables the series.
    #[serde(default = "one_ms")]
    pub sample_period_ms: f64,
    /// Normalized load at which a node counts as overloaded.
    #[serde(default = "unit")]
    pub overload_threshold: f64,
    /// When set, the server executes requests that would otherwise be
    /// dropped by the passive or proactive strategies.
    #[serde(default)]
    pub server_catch_all: bool,
    /// When false, access points only relay requests toward the server.
    #[serde(default = "yes")]
    pub access_points_execute: bool,
    /// Record every load change of every node.
    #[serde(default)]
    pub record_trace: bool,
}

impl ScenarioConfig {
    /// Parses a JSON scenario. Relative file paths are resolved against
    /// `base_dir` and loaded eagerly.
    pub fn from_json(json: &str, base_dir: Option<&Path>) -> Result<Self, SimError> {
        let mut cfg: ScenarioConfig =
            serde_json::from_str(json).map_err(|e| SimError::Config(e.to_string()))?;
        let resolve = |p: &Path| match base_dir {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        };
        if let TopologySource::File(p) = &cfg.topology {
            let path = resolve(p);
            let text = fs::read_to_string(&path).map_err(|source| SimError::Io {
                path: path.clone(),
                source,
            })?;
            cfg.topology = TopologySource::EdgeList(text);
        }
        if let Some(p) = cfg.service_catalog.take() {
            let path = resolve(&p);
            let text = fs::read_to_string(&path).map_err(|source| SimError::Io {
                path: path.clone(),
                source,
            })?;
            cfg.services
                .extend(crate::workload::parse_service_catalog(&text)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path.parent())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn with_strategy(mut self, kind: StrategyKind) -> Self {
        self.strategy.kind = kind;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn warmup_seconds(&self) -> f64 {
        self.warmup.unwrap_or(0.1 * self.horizon)
    }

    pub fn build_topology(&self) -> Result<Topology, SimError> {
        match &self.topology {
            TopologySource::Generate(spec) => Ok(generate_topology(spec, self.seed)?),
            TopologySource::EdgeList(text) => Ok(load_topology(text)?),
            TopologySource::File(p) => {
                let text = fs::read_to_string(p).map_err(|source| SimError::Io {
                    path: p.clone(),
                    source,
                })?;
                Ok(load_topology(&text)?)
            }
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return config_err("horizon must be positive");
        }
        let w = self.warmup_seconds();
        if !(w >= 0.0) || !(w < self.horizon) {
            return config_err("warm-up must satisfy 0 <= warmup < horizon");
        }
        if !(self.load_multiplier > 0.0) || !self.load_multiplier.is_finite() {
            return config_err("load multiplier must be positive");
        }
        if !(self.base_rate > 0.0) || !self.base_rate.is_finite() {
            return config_err("base rate must be positive");
        }
        if !(self.overload_threshold > 0.0) {
            return config_err("overload threshold must be positive");
        }
        if !(self.sample_period_ms >= 0.0) || !self.sample_period_ms.is_finite() {
            return config_err("sample period must be non-negative");
        }
        if self.strategy.k < 2 {
            return config_err("estimator buffer length k must be at least 2");
        }
        if !(self.strategy.gossip_period_ms >= 0.0) {
            return config_err("gossip period must be non-negative");
        }
        if self.services.is_empty() {
            return config_err("no services configured");
        }
        validate_catalog(&self.services)?;
        // Jitter windows are checked by the stream generator.
        poisson_stream(1.0, &self.jitters, self.horizon, &self.services, 0)?;
        let topo = self.build_topology()?;
        let executing = topo
            .nodes()
            .iter()
            .any(|n| !n.is_server && (self.access_points_execute || !n.is_access_point));
        if !executing && !self.server_catch_all {
            return config_err("no node can execute requests");
        }
        if topo.access_points().is_empty() {
            return config_err("topology has no access points");
        }
        Ok(())
    }
}

/// One load reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSample {
    pub time_ms: f64,
    pub node_id: NodeId,
    pub normalized_load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node_id: NodeId,
    /// Time-averaged normalized load over the measurement window.
    pub mean_load: f64,
    /// Time-averaged number of running services.
    pub mean_concurrency: f64,
    pub peak_load: f64,
    /// Completed executions of measured requests.
    pub executed: u64,
    /// Proactive admission draws taken in the measurement window.
    pub admission_draws: u64,
    pub mean_admission_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Average normalized load across executing nodes.
    pub tau: f64,
    /// Mean latency of executed requests, milliseconds.
    pub phi_ms: f64,
    /// Dropped over total requests.
    pub psi: f64,
    pub total: u64,
    pub executed: u64,
    pub forwarded: u64,
    pub dropped: u64,
    pub executed_at_server: u64,
    pub window_start_s: f64,
    pub window_end_s: f64,
    pub per_node: Vec<NodeMetrics>,
    #[serde(skip)]
    pub series: Vec<LoadSample>,
    #[serde(skip)]
    pub trace: Vec<LoadSample>,
}

impl RunMetrics {
    pub fn node(&self, id: NodeId) -> Option<&NodeMetrics> {
        self.per_node.iter().find(|n| n.node_id == id)
    }
}

#[derive(Debug, Clone, Copy)]
struct Time(f64);

impl PartialEq for Time {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Time {}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Completion { epoch: u64 },
    Gossip { from: NodeId, load: f64, as_of: f64 },
    Request { req: usize },
    FreshArrival,
    GossipTick,
    Sample,
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::Completion { .. } => 0,
            EventKind::Gossip { .. } => 1,
            EventKind::Request { .. } | EventKind::FreshArrival => 2,
            EventKind::GossipTick => 3,
            EventKind::Sample => 4,
        }
    }
}

/// Ordered by (time, kind rank, node, sequence number).
#[derive(Debug, Clone, Copy)]
struct Event {
    time: Time,
    rank: u8,
    node: usize,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.rank, self.node, self.seq)
            .cmp(&(other.time, other.rank, other.node, other.seq))
    }
}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
struct Job {
    finish_v: Time,
    seq: u64,
    req: usize,
    started: f64,
    cpu: f64,
    mem: f64,
    work: f64,
}

impl PartialEq for Job {
    fn eq(&self, o: &Self) -> bool {
        (self.finish_v, self.seq) == (o.finish_v, o.seq)
    }
}
impl Eq for Job {}
impl Ord for Job {
    fn cmp(&self, o: &Self) -> Ordering {
        (self.finish_v, self.seq).cmp(&(o.finish_v, o.seq))
    }
}
impl PartialOrd for Job {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

struct Req {
    service: usize,
    work: f64,
    ttl: u32,
    /// One-way network delay accumulated so far, ms.
    path_delay_ms: f64,
    measured: bool,
}

struct NodeRt {
    id: NodeId,
    executes: bool,
    is_server: bool,
    cpu_cap: f64,
    mem_cap: f64,
    vtime: f64,
    last_t: f64,
    jobs: BinaryHeap<Reverse<Job>>,
    cpu_used: f64,
    mem_used: f64,
    epoch: u64,
    estimator: Option<EstimatorState>,
    neighbors: NeighborLoadTable,
    load_integral: f64,
    conc_integral: f64,
    peak_load: f64,
    executed: u64,
    q_sum: f64,
    q_count: u64,
}

impl NodeRt {
    fn load(&self) -> f64 {
        self.cpu_used / self.cpu_cap
    }
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    topo: &'a Topology,
    nodes: Vec<NodeRt>,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    arrivals: Vec<crate::workload::Arrival>,
    next_arrival: usize,
    access_points: Vec<NodeId>,
    attr_rng: ChaCha8Rng,
    draw_rng: ChaCha8Rng,
    exec_dists: Vec<Exp<f64>>,
    reqs: Vec<Req>,
    ttl: u32,
    win_start: f64,
    win_end: f64,
    total: u64,
    executed: u64,
    forwarded: u64,
    dropped: u64,
    at_server: u64,
    latency_sum_ms: f64,
    series: Vec<LoadSample>,
    trace: Vec<LoadSample>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig, topo: &'a Topology) -> Result<Self, SimError> {
        let rate = cfg.base_rate * cfg.load_multiplier;
        let arrivals = poisson_stream(
            rate,
            &cfg.jitters,
            cfg.horizon,
            &cfg.services,
            stream_rng(cfg.seed, 1).random(),
        )?;
        let exec_dists = cfg
            .services
            .iter()
            .map(|s| {
                Exp::new(1.0 / s.mean_exec_time)
                    .map_err(|_| WorkloadError::InvalidRate(s.mean_exec_time))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let proactive = cfg.strategy.kind == StrategyKind::Proactive;
        let executes = |n: &crate::topology::NodeSpec| {
            !n.is_server && (cfg.access_points_execute || !n.is_access_point)
        };
        let mut nodes = Vec::with_capacity(topo.len());
        for n in topo.nodes() {
            let ex = executes(n);
            let mut neighbors = NeighborLoadTable::new();
            let mut estimator = None;
            if ex && proactive {
                estimator = Some(EstimatorState::new(cfg.strategy.k)?);
                for (m, _) in topo.neighbors(n.id) {
                    if topo.node(m).is_some_and(executes) {
                        neighbors.seed(m, 0.0);
                    }
                }
            }
            nodes.push(NodeRt {
                id: n.id,
                executes: ex,
                is_server: n.is_server,
                cpu_cap: n.cpu_capacity,
                mem_cap: n.mem_capacity,
                vtime: 0.0,
                last_t: 0.0,
                jobs: BinaryHeap::new(),
                cpu_used: 0.0,
                mem_used: 0.0,
                epoch: 0,
                estimator,
                neighbors,
                load_integral: 0.0,
                conc_integral: 0.0,
                peak_load: 0.0,
                executed: 0,
                q_sum: 0.0,
                q_count: 0,
            });
        }
        let ttl = cfg.strategy.ttl.unwrap_or(2 * topo.diameter());
        Ok(Self {
            cfg,
            topo,
            nodes,
            queue: BinaryHeap::new(),
            seq: 0,
            reqs: Vec::with_capacity(arrivals.len()),
            arrivals,
            next_arrival: 0,
            access_points: topo.access_points(),
            attr_rng: stream_rng(cfg.seed, 2),
            draw_rng: stream_rng(cfg.seed, 3),
            exec_dists,
            ttl,
            win_start: cfg.warmup_seconds(),
            win_end: cfg.horizon,
            total: 0,
            executed: 0,
            forwarded: 0,
            dropped: 0,
            at_server: 0,
            latency_sum_ms: 0.0,
            series: Vec::new(),
            trace: Vec::new(),
        })
    }

    fn push(&mut self, time: f64, node: usize, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            time: Time(time),
            rank: kind.rank(),
            node,
            seq: self.seq,
            kind,
        }));
    }

    fn idx(&self, id: NodeId) -> usize {
        self.topo
            .index_of(id)
            .expect("node ids come from the topology")
    }

    /// Brings a node's virtual clock and metric integrals up to `now`.
    fn advance(&mut self, i: usize, now: f64) {
        let (ws, we) = (self.win_start, self.win_end);
        let n = &mut self.nodes[i];
        let dt = now - n.last_t;
        if dt > 0.0 {
            let active = n.jobs.len() as f64;
            if active > 0.0 {
                n.vtime += dt / active;
            }
            let overlap = (now.min(we) - n.last_t.max(ws)).max(0.0);
            if overlap > 0.0 {
                n.load_integral += n.load() * overlap;
                n.conc_integral += active * overlap;
            }
            n.last_t = now;
        }
    }

    fn note_load(&mut self, i: usize, now: f64) {
        let n = &mut self.nodes[i];
        let load = n.load();
        if now >= self.win_start && now <= self.win_end && load > n.peak_load {
            n.peak_load = load;
        }
        if self.cfg.record_trace && now <= self.win_end {
            self.trace.push(LoadSample {
                time_ms: now * 1000.0,
                node_id: n.id,
                normalized_load: load,
            });
        }
    }

    fn reschedule(&mut self, i: usize, now: f64) {
        let n = &mut self.nodes[i];
        n.epoch += 1;
        let epoch = n.epoch;
        if let Some(Reverse(job)) = n.jobs.peek() {
            let t = now + ((job.finish_v.0 - n.vtime) * n.jobs.len() as f64).max(0.0);
            self.push(t, i, EventKind::Completion { epoch });
        }
    }

    fn run(mut self) -> RunMetrics {
        if !self.arrivals.is_empty() {
            let t = self.arrivals[0].time;
            self.push(t, 0, EventKind::FreshArrival);
        }
        if self.cfg.sample_period_ms > 0.0 {
            self.push(0.0, 0, EventKind::Sample);
        }
        if self.cfg.strategy.kind == StrategyKind::Proactive
            && self.cfg.strategy.gossip_period_ms > 0.0
        {
            for i in 0..self.nodes.len() {
                if self.nodes[i].executes {
                    self.push(0.0, i, EventKind::GossipTick);
                }
            }
        }

        while let Some(Reverse(ev)) = self.queue.pop() {
            let now = ev.time.0;
            match ev.kind {
                EventKind::FreshArrival => self.on_fresh_arrival(now),
                EventKind::Request { req } => self.on_request(ev.node, req, now),
                EventKind::Completion { epoch } => {
                    if epoch == self.nodes[ev.node].epoch {
                        self.on_completion(ev.node, now);
                    }
                }
                EventKind::Gossip { from, load, as_of } => {
                    self.nodes[ev.node].neighbors.update(from, load, as_of);
                }
                EventKind::GossipTick => self.on_gossip_tick(ev.node, now),
                EventKind::Sample => self.on_sample(now),
            }
        }

        let end = self.win_end;
        for i in 0..self.nodes.len() {
            if self.nodes[i].last_t < end {
                self.advance(i, end);
            }
        }
        self.finish()
    }

    fn on_fresh_arrival(&mut self, now: f64) {
        let arrival = self.arrivals[self.next_arrival];
        self.next_arrival += 1;
        if let Some(next) = self.arrivals.get(self.next_arrival) {
            let t = next.time;
            self.push(t, 0, EventKind::FreshArrival);
        }
        let service = self
            .cfg
            .services
            .iter()
            .position(|s| s.id == arrival.service_id)
            .expect("arrival service comes from the catalog");
        let origin = self.access_points[self.attr_rng.random_range(0..self.access_points.len())];
        let work = self.exec_dists[service].sample(&mut self.attr_rng);
        let measured = now >= self.win_start && now < self.win_end;
        if measured {
            self.total += 1;
        }
        self.reqs.push(Req {
            service,
            work,
            ttl: self.ttl,
            path_delay_ms: 0.0,
            measured,
        });
        let req = self.reqs.len() - 1;
        let i = self.idx(origin);
        self.on_request(i, req, now);
    }

    fn forward(&mut self, from: usize, to: NodeId, req: usize, now: f64) {
        let delay = self
            .topo
            .link_delay(self.nodes[from].id, to)
            .expect("forwarding only to neighbors");
        let r = &mut self.reqs[req];
        r.path_delay_ms += delay;
        r.ttl = r.ttl.saturating_sub(1);
        if r.measured {
            self.forwarded += 1;
        }
        let j = self.idx(to);
        self.push(now + delay / 1000.0, j, EventKind::Request { req });
    }

    fn drop_or_escalate(&mut self, i: usize, req: usize, now: f64) {
        if self.cfg.server_catch_all && self.cfg.strategy.kind != StrategyKind::None {
            let mut at = self.nodes[i].id;
            let mut delay = 0.0;
            while let Ok(next) = self.topo.next_hop_toward_server(at) {
                delay += self.topo.link_delay(at, next).unwrap_or(0.0);
                at = next;
            }
            self.reqs[req].path_delay_ms += delay;
            let s = self.idx(at);
            self.push(now + delay / 1000.0, s, EventKind::Request { req });
        } else if self.reqs[req].measured {
            self.dropped += 1;
        }
    }

    fn on_request(&mut self, i: usize, req: usize, now: f64) {
        if self.nodes[i].is_server {
            // Catch-all execution: unbounded capacity, no queueing.
            let r = &self.reqs[req];
            if r.measured {
                self.executed += 1;
                self.at_server += 1;
                self.latency_sum_ms += 2.0 * r.path_delay_ms + r.work * 1000.0;
            }
            return;
        }
        if !self.nodes[i].executes {
            let id = self.nodes[i].id;
            match self.topo.next_hop_toward_server(id) {
                Ok(next) if next != self.topo.server() => self.forward(i, next, req, now),
                _ => self.drop_or_escalate(i, req, now),
            }
            return;
        }

        self.advance(i, now);
        let load = self.nodes[i].load();
        let threshold = self.cfg.overload_threshold;
        let decision = match self.cfg.strategy.kind {
            StrategyKind::None => decide_none(load, threshold),
            StrategyKind::Passive => decide_passive(load, threshold, self.nodes[i].id, self.topo),
            StrategyKind::Proactive => {
                let measured = now >= self.win_start && now < self.win_end;
                let draw: f64 = self.draw_rng.random();
                let ttl = self.reqs[req].ttl;
                let n = &mut self.nodes[i];
                let est = n
                    .estimator
                    .as_mut()
                    .expect("proactive nodes carry an estimator");
                est.record_arrival(now)
                    .expect("simulation clock is monotone");
                if measured && ttl > 0 {
                    n.q_sum += est.execution_probability(n.cpu_cap, n.mem_cap);
                    n.q_count += 1;
                }
                let ctx = ProactiveContext {
                    cpu_capacity: n.cpu_cap,
                    mem_capacity: n.mem_cap,
                    node_load: load,
                    capacity_threshold: threshold,
                    ttl_remaining: ttl,
                    forwarding: self.cfg.strategy.forwarding,
                };
                decide_proactive(est, &n.neighbors, &ctx, draw)
            }
        };
        match decision {
            AdmissionDecision::Execute => self.start(i, req, now),
            AdmissionDecision::ForwardTo(to) => self.forward(i, to, req, now),
            AdmissionDecision::Drop => {
                if self.cfg.strategy.forwarding || self.cfg.strategy.kind != StrategyKind::Proactive
                {
                    self.drop_or_escalate(i, req, now)
                } else if self.reqs[req].measured {
                    self.dropped += 1;
                }
            }
        }
    }

    fn start(&mut self, i: usize, req: usize, now: f64) {
        let r = &self.reqs[req];
        let svc = &self.cfg.services[r.service];
        self.seq += 1;
        let n = &mut self.nodes[i];
        n.jobs.push(Reverse(Job {
            finish_v: Time(n.vtime + r.work),
            seq: self.seq,
            req,
            started: now,
            cpu: svc.cpu_cost,
            mem: svc.mem_cost,
            work: r.work,
        }));
        n.cpu_used += svc.cpu_cost;
        n.mem_used += svc.mem_cost;
        self.note_load(i, now);
        self.reschedule(i, now);
    }

    fn on_completion(&mut self, i: usize, now: f64) {
        self.advance(i, now);
        let mut done = Vec::new();
        {
            let n = &mut self.nodes[i];
            if let Some(Reverse(job)) = n.jobs.pop() {
                // Snap the clock to the finishing job to absorb rounding.
                n.vtime = n.vtime.max(job.finish_v.0);
                done.push(job);
            }
            while let Some(Reverse(job)) = n.jobs.peek() {
                if job.finish_v.0 <= n.vtime + 1e-15 * n.vtime.abs().max(1.0) {
                    let Reverse(job) = n.jobs.pop().expect("peeked");
                    done.push(job);
                } else {
                    break;
                }
            }
        }
        for job in done {
            let n = &mut self.nodes[i];
            n.cpu_used -= job.cpu;
            n.mem_used -= job.mem;
            if n.jobs.is_empty() {
                n.cpu_used = 0.0;
                n.mem_used = 0.0;
            }
            if let Some(est) = n.estimator.as_mut() {
                est.record_completion(job.work, job.cpu, job.mem)
                    .expect("sampled work is positive");
            }
            let r = &self.reqs[job.req];
            if r.measured {
                n.executed += 1;
                self.executed += 1;
                self.latency_sum_ms += 2.0 * r.path_delay_ms + (now - job.started) * 1000.0;
            }
        }
        self.note_load(i, now);
        self.reschedule(i, now);
        if self.cfg.strategy.kind == StrategyKind::Proactive
            && self.cfg.strategy.gossip_on_completion
        {
            self.gossip(i, now);
        }
    }

    fn gossip(&mut self, i: usize, now: f64) {
        let load = self.nodes[i].load();
        for m in publish_load(self.topo, self.nodes[i].id, load, now) {
            let j = self.idx(m.to);
            if self.nodes[j].estimator.is_some() {
                self.push(
                    m.deliver_at,
                    j,
                    EventKind::Gossip {
                        from: m.from,
                        load: m.load,
                        as_of: m.as_of,
                    },
                );
            }
        }
    }

    fn on_gossip_tick(&mut self, i: usize, now: f64) {
        self.gossip(i, now);
        let next = now + self.cfg.strategy.gossip_period_ms / 1000.0;
        if next <= self.cfg.horizon {
            self.push(next, i, EventKind::GossipTick);
        }
    }

    fn on_sample(&mut self, now: f64) {
        for n in self.nodes.iter().filter(|n| n.executes) {
            self.series.push(LoadSample {
                time_ms: now * 1000.0,
                node_id: n.id,
                normalized_load: n.load(),
            });
        }
        let step = self.cfg.sample_period_ms / 1000.0;
        // Multiply rather than accumulate so sample times stay exact.
        let k = (now / step).round() + 1.0;
        let next = k * step;
        if next <= self.cfg.horizon + 1e-12 {
            self.push(next, 0, EventKind::Sample);
        }
    }

    fn finish(self) -> RunMetrics {
        let span = self.win_end - self.win_start;
        let per_node: Vec<NodeMetrics> = self
            .nodes
            .iter()
            .filter(|n| n.executes)
            .map(|n| NodeMetrics {
                node_id: n.id,
                mean_load: if span > 0.0 {
                    n.load_integral / span
                } else {
                    0.0
                },
                mean_concurrency: if span > 0.0 {
                    n.conc_integral / span
                } else {
                    0.0
                },
                peak_load: n.peak_load,
                executed: n.executed,
                admission_draws: n.q_count,
                mean_admission_probability: if n.q_count > 0 {
                    n.q_sum / n.q_count as f64
                } else {
                    0.0
                },
            })
            .collect();
        let tau = if per_node.is_empty() {
            0.0
        } else {
            per_node.iter().map(|n| n.mean_load).sum::<f64>() / per_node.len() as f64
        };
        debug_assert_eq!(self.total, self.executed + self.dropped);
        RunMetrics {
            tau,
            phi_ms: if self.executed > 0 {
                self.latency_sum_ms / self.executed as f64
            } else {
                0.0
            },
            psi: if self.total > 0 {
                self.dropped as f64 / self.total as f64
            } else {
                0.0
            },
            total: self.total,
            executed: self.executed,
            forwarded: self.forwarded,
            dropped: self.dropped,
            executed_at_server: self.at_server,
            window_start_s: self.win_start,
            window_end_s: self.win_end,
            per_node,
            series: self.series,
            trace: self.trace,
        }
    }
}

/// Runs one scenario to completion, settling every in-flight request.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunMetrics, SimError> {
    config.validate()?;
    let topo = config.build_topology()?;
    run_on(config, &topo)
}

/// Runs a scenario on an already built topology.
pub fn run_on(config: &ScenarioConfig, topology: &Topology) -> Result<RunMetrics, SimError> {
    Ok(Sim::new(config, topology)?.run())
}

/// Runs the scenario once per seed, in parallel. Results are in seed order.
pub fn run_batch(config: &ScenarioConfig, seeds: &[u64]) -> Result<Vec<RunMetrics>, SimError> {
    config.validate()?;
    seeds
        .par_iter()
        .map(|&s| {
            let cfg = config.clone().with_seed(s);
            let topo = cfg.build_topology()?;
            run_on(&cfg, &topo)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = xs.into_iter().collect();
        if v.is_empty() {
            return Self {
                mean: 0.0,
                std: 0.0,
            };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Mean and sample standard deviation of each headline metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub tau: MeanStd,
    pub phi_ms: MeanStd,
    pub psi: MeanStd,
    pub executed: MeanStd,
    pub dropped: MeanStd,
}

pub fn summarize_batch(seeds: &[u64], runs: &[RunMetrics]) -> BatchSummary {
    BatchSummary {
        runs: runs.len(),
        seeds: seeds.to_vec(),
        tau: MeanStd::of(runs.iter().map(|r| r.tau)),
        phi_ms: MeanStd::of(runs.iter().map(|r| r.phi_ms)),
        psi: MeanStd::of(runs.iter().map(|r| r.psi)),
        executed: MeanStd::of(runs.iter().map(|r| r.executed as f64)),
        dropped: MeanStd::of(runs.iter().map(|r| r.dropped as f64)),
    }
}

// ---------------------------------------------------------------------------
// Presets

fn one_service(mean_exec_time: f64, cpu_cost: f64) -> Vec<ServiceSpec> {
    vec![ServiceSpec {
        id: 0,
        mean_exec_time,
        cpu_cost,
        mem_cost: 0.0,
        popularity_weight: 1.0,
    }]
}

/// Two-router jitter experiment: client, n1, n2 and a catch-all server on a
/// line. Steady traffic of 1000 requests/s with two 10 ms bursts at six
/// times the rate, starting at 40 ms and 70 ms.
pub fn preset_fig3() -> ScenarioConfig {
    ScenarioConfig {
        topology: TopologySource::Generate(GeneratorSpec::new(TopologyKind::Line { n: 4 })),
        // Steady traffic keeps n1 busy 60% of the time.
        services: one_service(0.6e-3, 0.03),
        service_catalog: None,
        base_rate: 1000.0,
        load_multiplier: 1.0,
        jitters: vec![
            JitterSpec {
                start_ms: 40.0,
                duration_ms: 10.0,
                rate_multiplier: 6.0,
            },
            JitterSpec {
                start_ms: 70.0,
                duration_ms: 10.0,
                rate_multiplier: 6.0,
            },
        ],
        strategy: StrategyConfig {
            k: 64,
            ..StrategyConfig::new(StrategyKind::Proactive)
        },
        horizon: 0.150,
        warmup: Some(0.0),
        seed: 1,
        sample_period_ms: 1.0,
        overload_threshold: 1.0,
        server_catch_all: true,
        access_points_execute: false,
        record_trace: true,
    }
}

/// Eight-fold overload on a four-node line whose access point executes.
pub fn preset_overload_line() -> ScenarioConfig {
    ScenarioConfig {
        topology: TopologySource::Generate(GeneratorSpec::new(TopologyKind::Line { n: 4 })),
        services: one_service(1e-3, 0.25),
        service_catalog: None,
        base_rate: 250.0,
        load_multiplier: 8.0,
        jitters: Vec::new(),
        strategy: StrategyConfig {
            k: 32,
            ..StrategyConfig::new(StrategyKind::Proactive)
        },
        horizon: 5.0,
        warmup: None,
        seed: 1,
        sample_period_ms: 1.0,
        overload_threshold: 1.0,
        server_catch_all: false,
        access_points_execute: true,
        record_trace: false,
    }
}

/// Eight-fold overload on a 5x5 grid; traffic enters at the three corners
/// away from the server.
pub fn preset_overload_grid() -> ScenarioConfig {
    ScenarioConfig {
        topology: TopologySource::Generate(GeneratorSpec::new(TopologyKind::Grid {
            width: 5,
            height: 5,
        })),
        services: one_service(1e-3, 0.25),
        service_catalog: None,
        base_rate: 1000.0,
        load_multiplier: 8.0,
        jitters: Vec::new(),
        strategy: StrategyConfig {
            k: 32,
            ..StrategyConfig::new(StrategyKind::Proactive)
        },
        horizon: 5.0,
        warmup: None,
        seed: 1,
        sample_period_ms: 1.0,
        overload_threshold: 1.0,
        server_catch_all: false,
        access_points_execute: true,
        record_trace: false,
    }
}

pub fn preset(name: &str) -> Option<ScenarioConfig> {
    match name {
        "fig3" => Some(preset_fig3()),
        "overload-line" => Some(preset_overload_line()),
        "overload-grid" => Some(preset_overload_grid()),
        _ => None,
    }
}

pub const PRESET_NAMES: [&str; 3] = ["fig3", "overload-line", "overload-grid"];

// ---------------------------------------------------------------------------
// Export

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

#[derive(Serialize)]
struct Summary<'a> {
    tau: f64,
    phi_ms: f64,
    psi: f64,
    total: u64,
    executed: u64,
    forwarded: u64,
    dropped: u64,
    executed_at_server: u64,
    per_node: &'a [NodeMetrics],
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> SimError + '_ {
    move |e| SimError::Io {
        path: path.to_path_buf(),
        source: io::Error::other(e.to_string()),
    }
}

/// Writes `summary.<ext>` and `series.<ext>` into `dir` and returns the
/// written paths.
/// Floats always carry a decimal point so columns parse uniformly.
fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn export_metrics(
    metrics: &RunMetrics,
    format: ExportFormat,
    dir: &Path,
) -> Result<Vec<PathBuf>, SimError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    match format {
        ExportFormat::Csv => {
            let summary = dir.join("summary.csv");
            let mut w = csv::Writer::from_path(&summary).map_err(csv_err(&summary))?;
            w.write_record([
                "tau",
                "phi_ms",
                "psi",
                "total",
                "executed",
                "forwarded",
                "dropped",
                "executed_at_server",
            ])
            .map_err(csv_err(&summary))?;
            w.write_record([
                num(metrics.tau),
                num(metrics.phi_ms),
                num(metrics.psi),
                metrics.total.to_string(),
                metrics.executed.to_string(),
                metrics.forwarded.to_string(),
                metrics.dropped.to_string(),
                metrics.executed_at_server.to_string(),
            ])
            .map_err(csv_err(&summary))?;
            w.flush().map_err(io_err(&summary))?;

            let nodes = dir.join("nodes.csv");
            let mut w = csv::Writer::from_path(&nodes).map_err(csv_err(&nodes))?;
            w.write_record([
                "node_id",
                "mean_load",
                "mean_concurrency",
                "peak_load",
                "executed",
                "admission_draws",
                "mean_admission_probability",
            ])
            .map_err(csv_err(&nodes))?;
            for n in &metrics.per_node {
                w.write_record([
                    n.node_id.to_string(),
                    num(n.mean_load),
                    num(n.mean_concurrency),
                    num(n.peak_load),
                    n.executed.to_string(),
                    n.admission_draws.to_string(),
                    num(n.mean_admission_probability),
                ])
                .map_err(csv_err(&nodes))?;
            }
            w.flush().map_err(io_err(&nodes))?;

            let series = dir.join("series.csv");
            let mut w = csv::Writer::from_path(&series).map_err(csv_err(&series))?;
            w.write_record(["time_ms", "node_id", "normalized_load"])
                .map_err(csv_err(&series))?;
            for s in &metrics.series {
                w.write_record([
                    num(s.time_ms),
                    s.node_id.to_string(),
                    num(s.normalized_load),
                ])
                .map_err(csv_err(&series))?;
            }
            w.flush().map_err(io_err(&series))?;
            Ok(vec![summary, nodes, series])
        }
        ExportFormat::Json => {
            let summary = dir.join("summary.json");
            let body = serde_json::to_string_pretty(&Summary {
                tau: metrics.tau,
                phi_ms: metrics.phi_ms,
                psi: metrics.psi,
                total: metrics.total,
                executed: metrics.executed,
                forwarded: metrics.forwarded,
                dropped: metrics.dropped,
                executed_at_server: metrics.executed_at_server,
                per_node: &metrics.per_node,
            })
            .expect("summary serializes");
            fs::write(&summary, body + "\n").map_err(io_err(&summary))?;
            let series = dir.join("series.json");
            let body = serde_json::to_string(&metrics.series).expect("series serializes");
            fs::write(&series, body + "\n").map_err(io_err(&series))?;
            Ok(vec![summary, series])
        }
    }
}
