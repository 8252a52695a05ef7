//! Network model: compute nodes with resource capacities, links with
//! propagation delays and a precomputed next-hop table toward the server.
//!
//! Topologies are immutable once built. They come either from the edge-list
//! text format (see [`load_topology`]) or from the seeded generators in
//! [`generate_topology`].

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = u32;

/// Link delay used when none is given.
pub const DEFAULT_LINK_DELAY_MS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub cpu_capacity: f64,
    pub mem_capacity: f64,
    pub is_access_point: bool,
    pub is_server: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: NodeId,
    pub b: NodeId,
    /// One-way propagation delay in milliseconds.
    pub delay_ms: f64,
}

fn at(line: &Option<usize>) -> String {
    match line {
        Some(l) => format!(" at line {l}"),
        None => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("no nodes")]
    NoNodes,
    #[error("syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("duplicate node {node}{}", at(.line))]
    DuplicateNode { node: NodeId, line: Option<usize> },
    #[error("non-positive capacity on node {node}{}", at(.line))]
    NonPositiveCapacity { node: NodeId, line: Option<usize> },
    #[error("self-loop{} (node {node})", at(.line))]
    SelfLoop { node: NodeId, line: Option<usize> },
    #[error("duplicate edge {a}-{b}{}", at(.line))]
    DuplicateEdge {
        a: NodeId,
        b: NodeId,
        line: Option<usize>,
    },
    #[error("negative delay on edge {a}-{b}{}", at(.line))]
    NegativeDelay {
        a: NodeId,
        b: NodeId,
        line: Option<usize>,
    },
    #[error("edge references unknown node {node}{}", at(.line))]
    UnknownNode { node: NodeId, line: Option<usize> },
    #[error("missing server")]
    MissingServer,
    #[error("more than one server (nodes {first} and {second})")]
    MultipleServers { first: NodeId, second: NodeId },
    #[error("graph is disconnected: node {node} cannot reach the server")]
    Disconnected { node: NodeId },
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("node {0} is the server and has no next hop")]
    ServerHasNoNextHop(NodeId),
    #[error("unknown node {0}")]
    NoSuchNode(NodeId),
}

/// A validated, connected network with exactly one server.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: Vec<NodeSpec>,
    links: Vec<LinkSpec>,
    index: BTreeMap<NodeId, usize>,
    /// Per node index: (neighbor index, delay), sorted by neighbor id.
    adjacency: Vec<Vec<(usize, f64)>>,
    next_hop: Vec<Option<usize>>,
    hops: Vec<u32>,
    server: usize,
}

impl Topology {
    /// Validates nodes and links and builds the routing table.
    pub fn new(nodes: Vec<NodeSpec>, links: Vec<LinkSpec>) -> Result<Self, TopologyError> {
        if nodes.is_empty() {
            return Err(TopologyError::NoNodes);
        }
        let mut nodes = nodes;
        nodes.sort_by_key(|n| n.id);
        let mut index = BTreeMap::new();
        let mut server: Option<usize> = None;
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(TopologyError::DuplicateNode {
                    node: n.id,
                    line: None,
                });
            }
            if !(n.cpu_capacity > 0.0) || !(n.mem_capacity > 0.0) {
                return Err(TopologyError::NonPositiveCapacity {
                    node: n.id,
                    line: None,
                });
            }
            if n.is_server {
                if let Some(s) = server {
                    return Err(TopologyError::MultipleServers {
                        first: nodes[s].id,
                        second: n.id,
                    });
                }
                server = Some(i);
            }
        }
        let server = server.ok_or(TopologyError::MissingServer)?;

        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nodes.len()];
        let mut seen = BTreeSet::new();
        for l in &links {
            check_link(l, &index, &mut seen, None)?;
            let (ia, ib) = (index[&l.a], index[&l.b]);
            adjacency[ia].push((ib, l.delay_ms));
            adjacency[ib].push((ia, l.delay_ms));
        }
        for adj in &mut adjacency {
            adj.sort_by_key(|&(j, _)| nodes[j].id);
        }

        // BFS in hops from the server.
        let mut hops = vec![u32::MAX; nodes.len()];
        hops[server] = 0;
        let mut queue = VecDeque::from([server]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &adjacency[u] {
                if hops[v] == u32::MAX {
                    hops[v] = hops[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if let Some(i) = hops.iter().position(|&h| h == u32::MAX) {
            return Err(TopologyError::Disconnected { node: nodes[i].id });
        }
        // Adjacency is sorted by id, so the first closer neighbor is the
        // lowest-id one.
        let next_hop = (0..nodes.len())
            .map(|u| {
                if u == server {
                    None
                } else {
                    adjacency[u]
                        .iter()
                        .map(|&(v, _)| v)
                        .find(|&v| hops[v] + 1 == hops[u])
                }
            })
            .collect();

        Ok(Self {
            nodes,
            links,
            index,
            adjacency,
            next_hop,
            hops,
            server,
        })
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn server(&self) -> NodeId {
        self.nodes[self.server].id
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    /// Dense index of a node id (position in [`Topology::nodes`]).
    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn access_points(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.is_access_point)
            .map(|n| n.id)
            .collect()
    }

    /// One-hop neighbors with link delays, ascending by id.
    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        let adj = self
            .index
            .get(&id)
            .map(|&i| self.adjacency[i].as_slice())
            .unwrap_or(&[]);
        adj.iter().map(|&(j, d)| (self.nodes[j].id, d))
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.index
            .get(&id)
            .map(|&i| self.adjacency[i].len())
            .unwrap_or(0)
    }

    pub fn link_delay(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.neighbors(a).find(|&(n, _)| n == b).map(|(_, d)| d)
    }

    /// Hop count from `id` to the server.
    pub fn hops_to_server(&self, id: NodeId) -> Option<u32> {
        self.index.get(&id).map(|&i| self.hops[i])
    }

    pub fn next_hop_toward_server(&self, id: NodeId) -> Result<NodeId, TopologyError> {
        let i = *self.index.get(&id).ok_or(TopologyError::NoSuchNode(id))?;
        self.next_hop[i]
            .map(|j| self.nodes[j].id)
            .ok_or(TopologyError::ServerHasNoNextHop(id))
    }

    /// Largest hop distance between any two nodes.
    pub fn diameter(&self) -> u32 {
        (0..self.nodes.len())
            .map(|s| {
                let mut dist = vec![u32::MAX; self.nodes.len()];
                dist[s] = 0;
                let mut q = VecDeque::from([s]);
                let mut far = 0;
                while let Some(u) = q.pop_front() {
                    far = far.max(dist[u]);
                    for &(v, _) in &self.adjacency[u] {
                        if dist[v] == u32::MAX {
                            dist[v] = dist[u] + 1;
                            q.push_back(v);
                        }
                    }
                }
                far
            })
            .max()
            .unwrap_or(0)
    }
}

fn check_link(
    l: &LinkSpec,
    index: &BTreeMap<NodeId, usize>,
    seen: &mut BTreeSet<(NodeId, NodeId)>,
    line: Option<usize>,
) -> Result<(), TopologyError> {
    if l.a == l.b {
        return Err(TopologyError::SelfLoop { node: l.a, line });
    }
    for n in [l.a, l.b] {
        if !index.contains_key(&n) {
            return Err(TopologyError::UnknownNode { node: n, line });
        }
    }
    if !(l.delay_ms >= 0.0) || !l.delay_ms.is_finite() {
        return Err(TopologyError::NegativeDelay {
            a: l.a,
            b: l.b,
            line,
        });
    }
    let key = (l.a.min(l.b), l.a.max(l.b));
    if !seen.insert(key) {
        return Err(TopologyError::DuplicateEdge {
            a: key.0,
            b: key.1,
            line,
        });
    }
    Ok(())
}

/// Parses the edge-list format:
///
/// ```text
/// # comment
/// nodes 4 server 3
/// 0 1.0 1.0 1
/// 1 1.0 1.0 0
/// 2 1.0 1.0 0
/// 3 1.0 1.0 0
/// 0 1 1.0
/// 1 2 1.0
/// 2 3
/// ```
///
/// Node lines are `id cpu mem access_flag`; edge lines are `u v [delay_ms]`
/// with the delay defaulting to 1 ms.
pub fn load_topology(source: &str) -> Result<Topology, TopologyError> {
    let mut lines = source
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let Some((hline, header)) = lines.next() else {
        return Err(TopologyError::NoNodes);
    };
    let syntax = |line: usize, message: &str| TopologyError::Syntax {
        line,
        message: message.to_string(),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (n_nodes, server): (usize, NodeId) = match fields.as_slice() {
        ["nodes", n, "server", s] => (
            n.parse()
                .map_err(|_| syntax(hline, "node count is not an integer"))?,
            s.parse()
                .map_err(|_| syntax(hline, "server id is not an integer"))?,
        ),
        _ => return Err(syntax(hline, "expected header `nodes N server S`")),
    };
    if n_nodes == 0 {
        return Err(TopologyError::NoNodes);
    }

    let mut nodes = Vec::with_capacity(n_nodes.min(1 << 16));
    let mut index = BTreeMap::new();
    for k in 0..n_nodes {
        let Some((line, text)) = lines.next() else {
            return Err(syntax(
                hline,
                &format!("header declares {n_nodes} nodes but only {k} were listed"),
            ));
        };
        let f: Vec<&str> = text.split_whitespace().collect();
        if f.len() != 4 {
            return Err(syntax(line, "expected `id cpu mem access_flag`"));
        }
        let id: NodeId = f[0]
            .parse()
            .map_err(|_| syntax(line, "node id is not an integer"))?;
        let cpu: f64 = f[1]
            .parse()
            .map_err(|_| syntax(line, "cpu capacity is not a number"))?;
        let mem: f64 = f[2]
            .parse()
            .map_err(|_| syntax(line, "memory capacity is not a number"))?;
        let access = match f[3] {
            "0" | "false" => false,
            "1" | "true" => true,
            _ => return Err(syntax(line, "access flag must be 0 or 1")),
        };
        if !(cpu > 0.0) || !(mem > 0.0) || !cpu.is_finite() || !mem.is_finite() {
            return Err(TopologyError::NonPositiveCapacity {
                node: id,
                line: Some(line),
            });
        }
        if index.insert(id, nodes.len()).is_some() {
            return Err(TopologyError::DuplicateNode {
                node: id,
                line: Some(line),
            });
        }
        nodes.push(NodeSpec {
            id,
            cpu_capacity: cpu,
            mem_capacity: mem,
            is_access_point: access,
            is_server: id == server,
        });
    }
    if !index.contains_key(&server) {
        return Err(TopologyError::MissingServer);
    }

    let mut links = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, text) in lines {
        let f: Vec<&str> = text.split_whitespace().collect();
        if f.len() != 2 && f.len() != 3 {
            return Err(syntax(line, "expected `u v [delay_ms]`"));
        }
        let a: NodeId = f[0]
            .parse()
            .map_err(|_| syntax(line, "edge endpoint is not an integer"))?;
        let b: NodeId = f[1]
            .parse()
            .map_err(|_| syntax(line, "edge endpoint is not an integer"))?;
        let delay_ms = match f.get(2) {
            Some(d) => d
                .parse()
                .map_err(|_| syntax(line, "delay is not a number"))?,
            None => DEFAULT_LINK_DELAY_MS,
        };
        let link = LinkSpec { a, b, delay_ms };
        check_link(&link, &index, &mut seen, Some(line))?;
        links.push(link);
    }
    Topology::new(nodes, links)
}

/// Writes a topology back out in the edge-list format.
pub fn write_topology(topology: &Topology) -> String {
    let mut out = format!("nodes {} server {}\n", topology.len(), topology.server());
    for n in topology.nodes() {
        out.push_str(&format!(
            "{} {} {} {}\n",
            n.id, n.cpu_capacity, n.mem_capacity, n.is_access_point as u8
        ));
    }
    for l in topology.links() {
        out.push_str(&format!("{} {} {}\n", l.a, l.b, l.delay_ms));
    }
    out
}

/// Shape of a generated topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyKind {
    Line {
        n: usize,
    },
    Grid {
        width: usize,
        height: usize,
    },
    /// Complete tree with the given branching factor and depth.
    Tree {
        branching: usize,
        depth: usize,
    },
    /// Preferential attachment; every new node attaches `edges_per_node`
    /// links.
    ScaleFree {
        n: usize,
        #[serde(default = "one")]
        edges_per_node: usize,
        /// When set, access points are a seeded sample of this many
        /// degree-one nodes.
        #[serde(default)]
        access_points: Option<usize>,
    },
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

fn default_delay() -> f64 {
    DEFAULT_LINK_DELAY_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: TopologyKind,
    #[serde(default = "unit")]
    pub cpu_capacity: f64,
    #[serde(default = "unit")]
    pub mem_capacity: f64,
    #[serde(default = "default_delay")]
    pub link_delay_ms: f64,
}

impl GeneratorSpec {
    pub fn new(kind: TopologyKind) -> Self {
        Self {
            kind,
            cpu_capacity: 1.0,
            mem_capacity: 1.0,
            link_delay_ms: DEFAULT_LINK_DELAY_MS,
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyKind::Line { n } => write!(f, "line({n})"),
            TopologyKind::Grid { width, height } => write!(f, "grid({width},{height})"),
            TopologyKind::Tree { branching, depth } => write!(f, "tree({branching},{depth})"),
            TopologyKind::ScaleFree {
                n, edges_per_node, ..
            } => write!(f, "scale_free({n},{edges_per_node})"),
        }
    }
}

/// Builds a topology of the given shape. The result is a pure function of
/// `(spec, seed)`; only `scale_free` consumes randomness.
/// Upper bound on generated topology size.
pub const MAX_GENERATED_NODES: usize = 1_000_000;

pub fn generate_topology(spec: &GeneratorSpec, seed: u64) -> Result<Topology, TopologyError> {
    let invalid = |m: &str| Err(TopologyError::InvalidParams(m.to_string()));
    if !(spec.cpu_capacity > 0.0) || !(spec.mem_capacity > 0.0) {
        return invalid("capacities must be positive");
    }
    if !(spec.link_delay_ms >= 0.0) || !spec.link_delay_ms.is_finite() {
        return invalid("link delay must be non-negative");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (node count, edges, server override, sampled access points)
    type Shape = (usize, Vec<(usize, usize)>, Option<usize>, Option<usize>);
    let (n, edges, server, sampled_aps): Shape = match spec.kind {
        TopologyKind::Line { n } => {
            if n < 2 {
                return invalid("line needs at least 2 nodes");
            }
            if n > MAX_GENERATED_NODES {
                return invalid("line too large");
            }
            (n, (1..n).map(|i| (i - 1, i)).collect(), None, None)
        }
        TopologyKind::Grid { width, height } => {
            if width == 0 || height == 0 || width.saturating_mul(height) < 2 {
                return invalid("grid needs width*height >= 2");
            }
            if width.saturating_mul(height) > MAX_GENERATED_NODES {
                return invalid("grid too large");
            }
            let mut e = Vec::new();
            for y in 0..height {
                for x in 0..width {
                    let i = y * width + x;
                    if x + 1 < width {
                        e.push((i, i + 1));
                    }
                    if y + 1 < height {
                        e.push((i, i + width));
                    }
                }
            }
            // Corner (0, 0).
            (width * height, e, Some(0), None)
        }
        TopologyKind::Tree { branching, depth } => {
            if branching == 0 || depth == 0 {
                return invalid("tree needs branching >= 1 and depth >= 1");
            }
            let mut n = 1usize;
            let mut level = 1usize;
            for _ in 0..depth {
                level = level.saturating_mul(branching);
                n = n.saturating_add(level);
                if n > MAX_GENERATED_NODES {
                    return invalid("tree too large");
                }
            }
            let e = (1..n).map(|i| ((i - 1) / branching, i)).collect();
            (n, e, None, None)
        }
        TopologyKind::ScaleFree {
            n,
            edges_per_node,
            access_points,
        } => {
            if edges_per_node == 0 || n < edges_per_node + 1 {
                return invalid("scale_free needs n > edges_per_node >= 1");
            }
            if n > MAX_GENERATED_NODES {
                return invalid("scale_free too large");
            }
            let m = edges_per_node;
            let mut e = Vec::new();
            // Seed clique of m + 1 nodes.
            let mut targets: Vec<usize> = Vec::new();
            for i in 0..=m {
                for j in 0..i {
                    e.push((j, i));
                    targets.push(i);
                    targets.push(j);
                }
            }
            for v in (m + 1)..n {
                let mut chosen = BTreeSet::new();
                while chosen.len() < m {
                    chosen.insert(targets[rng.random_range(0..targets.len())]);
                }
                for &u in &chosen {
                    e.push((u, v));
                    targets.push(u);
                    targets.push(v);
                }
            }
            let mut degree = vec![0usize; n];
            for &(a, b) in &e {
                degree[a] += 1;
                degree[b] += 1;
            }
            let max_deg = *degree.iter().max().unwrap_or(&0);
            let server = degree.iter().position(|&d| d == max_deg);
            (n, e, server, access_points)
        }
    };

    let mut degree = vec![0usize; n];
    for &(a, b) in &edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    let server = match server {
        Some(s) => s,
        None => max_eccentricity_node(n, &edges),
    };
    let mut candidates: Vec<usize> = (0..n).filter(|&i| i != server && degree[i] == 1).collect();
    if candidates.is_empty() {
        // No leaves (e.g. grids): fall back to the lowest-degree nodes.
        let min_deg = (0..n)
            .filter(|&i| i != server)
            .map(|i| degree[i])
            .min()
            .unwrap_or(0);
        candidates = (0..n)
            .filter(|&i| i != server && degree[i] == min_deg)
            .collect();
    }
    let access: BTreeSet<usize> = match sampled_aps {
        Some(k) if k < candidates.len() => {
            candidates.choose_multiple(&mut rng, k).copied().collect()
        }
        _ => candidates.into_iter().collect(),
    };

    let nodes = (0..n)
        .map(|i| NodeSpec {
            id: i as NodeId,
            cpu_capacity: spec.cpu_capacity,
            mem_capacity: spec.mem_capacity,
            is_access_point: access.contains(&i),
            is_server: i == server,
        })
        .collect();
    let links = edges
        .into_iter()
        .map(|(a, b)| LinkSpec {
            a: a as NodeId,
            b: b as NodeId,
            delay_ms: spec.link_delay_ms,
        })
        .collect();
    Topology::new(nodes, links)
}

/// Highest-id node among those with maximum eccentricity.
fn max_eccentricity_node(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let ecc = |s: usize| {
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut q = VecDeque::from([s]);
        let mut far = 0;
        while let Some(u) = q.pop_front() {
            far = far.max(dist[u]);
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        far
    };
    let eccs: Vec<usize> = (0..n).map(ecc).collect();
    let best = *eccs.iter().max().unwrap_or(&0);
    (0..n).rev().find(|&i| eccs[i] == best).unwrap_or(0)
}
