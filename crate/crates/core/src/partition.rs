//! App call graphs and their clustering into offloadable partitions.
//!
//! Vertices are classes and undirected edges carry the number of runtime
//! invocations between two classes. Girvan-Newman splits the graph by
//! repeatedly removing the edge with the highest betweenness; Louvain picks
//! the number of clusters worth trying.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tag that keeps a class on the device.
pub const PINNED: &str = "pinned";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PartitionError {
    #[error("malformed call graph: {0}")]
    Parse(String),
    #[error("malformed tag rules: {0}")]
    Rules(String),
    #[error("duplicate class `{0}`")]
    DuplicateClass(String),
    #[error("edge references unknown class `{0}`")]
    UnknownClass(String),
    #[error("self-edge on class `{0}`")]
    SelfEdge(String),
    #[error("edge {0} -- {1} has non-positive weight {2}")]
    BadWeight(String, String, f64),
    #[error("method `{class}.{method}`: {reason}")]
    BadMethod {
        class: String,
        method: String,
        reason: &'static str,
    },
    #[error("requested {requested} clusters but the graph has {vertices} classes")]
    TooManyClusters { requested: usize, vertices: usize },
    #[error("partition does not cover the graph exactly")]
    NotAPartition,
    #[error("graph has no classes")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodProfile {
    pub name: String,
    pub invocations: u64,
    pub t_local_ms: f64,
    #[serde(default)]
    pub in_bytes: f64,
    #[serde(default)]
    pub out_bytes: f64,
    #[serde(default)]
    pub energy_mj: f64,
    /// Per-method remote speedup; overrides the network-wide figure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassVertex {
    pub name: String,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default)]
    pub methods: Vec<MethodProfile>,
}

impl ClassVertex {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            tags: BTreeSet::new(),
            methods: Vec::new(),
        }
    }

    pub fn is_pinned(&self) -> bool {
        self.tags.contains(PINNED)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// Smaller vertex index.
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EdgeRecord {
    a: String,
    b: String,
    weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphFile {
    vertices: Vec<ClassVertex>,
    #[serde(default)]
    edges: Vec<EdgeRecord>,
}

/// Validated, undirected, weighted class graph. Edges are sorted by
/// endpoint indices and parallel edges are merged.
#[derive(Debug, Clone, PartialEq)]
pub struct CallGraph {
    vertices: Vec<ClassVertex>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl CallGraph {
    /// Builds a graph from vertices and `(a, b, weight)` index triples.
    pub fn new(
        vertices: Vec<ClassVertex>,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, PartitionError> {
        let mut seen = BTreeSet::new();
        for v in &vertices {
            if !seen.insert(v.name.as_str()) {
                return Err(PartitionError::DuplicateClass(v.name.clone()));
            }
            for m in &v.methods {
                let bad = |reason| PartitionError::BadMethod {
                    class: v.name.clone(),
                    method: m.name.clone(),
                    reason,
                };
                if !(m.t_local_ms > 0.0) || !m.t_local_ms.is_finite() {
                    return Err(bad("local time must be positive"));
                }
                if !(m.in_bytes >= 0.0) || !(m.out_bytes >= 0.0) {
                    return Err(bad("state sizes must be non-negative"));
                }
                if !(m.energy_mj >= 0.0) {
                    return Err(bad("energy must be non-negative"));
                }
                if m.cpu_scale.is_some_and(|s| !(s > 0.0)) {
                    return Err(bad("cpu scale must be positive"));
                }
            }
        }
        let n = vertices.len();
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (a, b, w) in edges {
            let name = |i: usize| {
                vertices
                    .get(i)
                    .map(|v| v.name.clone())
                    .unwrap_or_else(|| format!("#{i}"))
            };
            if a >= n {
                return Err(PartitionError::UnknownClass(name(a)));
            }
            if b >= n {
                return Err(PartitionError::UnknownClass(name(b)));
            }
            if a == b {
                return Err(PartitionError::SelfEdge(name(a)));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(PartitionError::BadWeight(name(a), name(b), w));
            }
            *merged.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
        }
        let edges: Vec<Edge> = merged
            .into_iter()
            .map(|((a, b), weight)| Edge { a, b, weight })
            .collect();
        let mut adjacency = vec![Vec::new(); n];
        for (e, edge) in edges.iter().enumerate() {
            adjacency[edge.a].push((edge.b, e));
            adjacency[edge.b].push((edge.a, e));
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        Ok(Self {
            vertices,
            edges,
            adjacency,
        })
    }

    pub fn vertices(&self) -> &[ClassVertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.vertices.iter().position(|v| v.name == name)
    }

    /// `(neighbor, edge index)` pairs sorted by neighbor.
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            vertices: self.vertices.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    a: self.vertices[e.a].name.clone(),
                    b: self.vertices[e.b].name.clone(),
                    weight: e.weight,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("graph serializes")
    }
}

/// Parses the JSON call-graph document.
pub fn build_call_graph(source: &str) -> Result<CallGraph, PartitionError> {
    let file: GraphFile =
        serde_json::from_str(source).map_err(|e| PartitionError::Parse(e.to_string()))?;
    let index: HashMap<&str, usize> = file
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| (v.name.as_str(), i))
        .collect();
    let mut edges = Vec::with_capacity(file.edges.len());
    for e in &file.edges {
        let a = *index
            .get(e.a.as_str())
            .ok_or_else(|| PartitionError::UnknownClass(e.a.clone()))?;
        let b = *index
            .get(e.b.as_str())
            .ok_or_else(|| PartitionError::UnknownClass(e.b.clone()))?;
        if a == b {
            return Err(PartitionError::SelfEdge(e.a.clone()));
        }
        if !(e.weight > 0.0) || !e.weight.is_finite() {
            return Err(PartitionError::BadWeight(
                e.a.clone(),
                e.b.clone(),
                e.weight,
            ));
        }
        edges.push((a, b, e.weight));
    }
    CallGraph::new(file.vertices, edges)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagRule {
    pub prefix: String,
    pub tag: String,
}

pub fn parse_tag_rules(source: &str) -> Result<Vec<TagRule>, PartitionError> {
    let rules: Vec<TagRule> =
        serde_json::from_str(source).map_err(|e| PartitionError::Rules(e.to_string()))?;
    if let Some(r) = rules
        .iter()
        .find(|r| r.prefix.is_empty() || r.tag.is_empty())
    {
        return Err(PartitionError::Rules(format!(
            "empty prefix or tag in rule {:?} -> {:?}",
            r.prefix, r.tag
        )));
    }
    Ok(rules)
}

/// `prefix` matches whole dot-separated segments of `name`.
fn prefix_matches(prefix: &str, name: &str) -> bool {
    name == prefix
        || (name.len() > prefix.len()
            && name.starts_with(prefix)
            && name.as_bytes()[prefix.len()] == b'.')
}

/// Tags each class with the tag of its longest matching rule. On equal
/// lengths the earlier rule wins.
pub fn apply_tag_rules(graph: &CallGraph, rules: &[TagRule]) -> CallGraph {
    let mut g = graph.clone();
    for v in &mut g.vertices {
        let mut best: Option<&TagRule> = None;
        for r in rules {
            if prefix_matches(&r.prefix, &v.name)
                && best.is_none_or(|b| r.prefix.len() > b.prefix.len())
            {
                best = Some(r);
            }
        }
        if let Some(r) = best {
            v.tags.insert(r.tag.clone());
        }
    }
    g
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Every edge has length one.
    #[default]
    Hops,
    /// Edge length is the reciprocal of its weight.
    InverseWeight,
}

const PATH_EPS: f64 = 1e-12;

/// Brandes accumulation over the edges with `active[e]` set.
fn betweenness_on(g: &CallGraph, active: &[bool], mode: DistanceMode) -> Vec<f64> {
    let n = g.len();
    let mut score = vec![0.0; g.edges.len()];
    let mut dist = vec![f64::INFINITY; n];
    let mut sigma = vec![0.0f64; n];
    let mut delta = vec![0.0f64; n];
    let mut preds: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut order = Vec::with_capacity(n);
    for s in 0..n {
        dist.fill(f64::INFINITY);
        sigma.fill(0.0);
        delta.fill(0.0);
        preds.iter_mut().for_each(Vec::clear);
        order.clear();
        dist[s] = 0.0;
        sigma[s] = 1.0;
        match mode {
            DistanceMode::Hops => {
                let mut queue = VecDeque::from([s]);
                while let Some(v) = queue.pop_front() {
                    order.push(v);
                    for &(w, e) in g.neighbors(v) {
                        if !active[e] {
                            continue;
                        }
                        if dist[w].is_infinite() {
                            dist[w] = dist[v] + 1.0;
                            queue.push_back(w);
                        }
                        if dist[w] == dist[v] + 1.0 {
                            sigma[w] += sigma[v];
                            preds[w].push((v, e));
                        }
                    }
                }
            }
            DistanceMode::InverseWeight => {
                // Dense Dijkstra; call graphs here are small.
                let mut done = vec![false; n];
                loop {
                    let mut pick: Option<usize> = None;
                    for v in 0..n {
                        if !done[v] && dist[v].is_finite() && pick.is_none_or(|p| dist[v] < dist[p])
                        {
                            pick = Some(v);
                        }
                    }
                    let Some(v) = pick else { break };
                    done[v] = true;
                    order.push(v);
                    for &(w, e) in g.neighbors(v) {
                        if !active[e] || done[w] {
                            continue;
                        }
                        let d = dist[v] + 1.0 / g.edges[e].weight;
                        let tol = PATH_EPS * d.abs().max(1.0);
                        if d < dist[w] - tol {
                            dist[w] = d;
                            sigma[w] = sigma[v];
                            preds[w].clear();
                            preds[w].push((v, e));
                        } else if (d - dist[w]).abs() <= tol {
                            sigma[w] += sigma[v];
                            preds[w].push((v, e));
                        }
                    }
                }
            }
        }
        for &w in order.iter().rev() {
            for &(v, e) in &preds[w] {
                let c = sigma[v] / sigma[w] * (1.0 + delta[w]);
                score[e] += c;
                delta[v] += c;
            }
        }
    }
    // Each unordered pair was counted from both ends.
    for x in &mut score {
        *x /= 2.0;
    }
    score
}

/// Shortest-path betweenness of every edge, aligned with
/// [`CallGraph::edges`]. Each vertex pair contributes one unit, split
/// equally among its shortest paths.
pub fn edge_betweenness(graph: &CallGraph, mode: DistanceMode) -> Vec<f64> {
    betweenness_on(graph, &vec![true; graph.edges.len()], mode)
}

fn components_on(g: &CallGraph, active: &[bool]) -> Vec<Vec<usize>> {
    let n = g.len();
    let mut label = vec![usize::MAX; n];
    let mut out = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![s];
        label[s] = id;
        let mut i = 0;
        while i < members.len() {
            let v = members[i];
            i += 1;
            for &(w, e) in g.neighbors(v) {
                if active[e] && label[w] == usize::MAX {
                    label[w] = id;
                    members.push(w);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSet {
    /// Vertex indices; clusters are ordered by their smallest member.
    pub clusters: Vec<Vec<usize>>,
    pub n_clusters: usize,
    pub modularity: f64,
    /// False for clusters holding a pinned class.
    pub offloadable: Vec<bool>,
}

impl PartitionSet {
    pub fn from_clusters(
        graph: &CallGraph,
        clusters: Vec<Vec<usize>>,
    ) -> Result<Self, PartitionError> {
        let clusters = canonical(clusters);
        let q = modularity(graph, &clusters)?;
        let offloadable = clusters
            .iter()
            .map(|c| c.iter().all(|&v| !graph.vertices[v].is_pinned()))
            .collect();
        Ok(Self {
            n_clusters: clusters.len(),
            clusters,
            modularity: q,
            offloadable,
        })
    }

    /// Cluster index of each vertex.
    pub fn membership(&self, n: usize) -> Vec<usize> {
        let mut m = vec![usize::MAX; n];
        for (c, members) in self.clusters.iter().enumerate() {
            for &v in members {
                m[v] = c;
            }
        }
        m
    }
}

fn canonical(mut clusters: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    clusters.retain(|c| !c.is_empty());
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters.sort();
    clusters
}

/// One Girvan-Newman run and the partitions it passed through.
#[derive(Debug, Clone, PartialEq)]
pub struct GnRun {
    /// Removed edges as `(a, b)` vertex pairs, in removal order.
    pub removed: Vec<(usize, usize)>,
    /// Component structure after each split, starting with the input's
    /// own components. Each entry refines the previous one.
    pub levels: Vec<Vec<Vec<usize>>>,
}

/// Removes maximum-betweenness edges until `target` components exist.
/// Betweenness is recomputed over the whole remaining graph after every
/// removal. Ties within a relative 1e-9 go to the lexicographically
/// smallest `(a, b)` pair.
pub fn girvan_newman_run(
    graph: &CallGraph,
    target: usize,
    mode: DistanceMode,
) -> Result<GnRun, PartitionError> {
    if graph.is_empty() {
        return Err(PartitionError::Empty);
    }
    if target > graph.len() {
        return Err(PartitionError::TooManyClusters {
            requested: target,
            vertices: graph.len(),
        });
    }
    let mut active = vec![true; graph.edges.len()];
    let mut comps = components_on(graph, &active);
    let mut run = GnRun {
        removed: Vec::new(),
        levels: vec![comps.clone()],
    };
    while comps.len() < target {
        let score = betweenness_on(graph, &active, mode);
        let max = (0..score.len())
            .filter(|&e| active[e])
            .map(|e| score[e])
            .fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-9 * max.abs().max(1.0);
        // Edges are sorted by (a, b), so the first hit is the smallest pair.
        let e = (0..score.len())
            .find(|&e| active[e] && score[e] >= max - tol)
            .expect("a graph with fewer components than vertices has an edge");
        active[e] = false;
        run.removed.push((graph.edges[e].a, graph.edges[e].b));
        let next = components_on(graph, &active);
        if next.len() > comps.len() {
            run.levels.push(next.clone());
        }
        comps = next;
    }
    Ok(run)
}

/// Girvan-Newman clustering into `n_clusters` components, with modularity
/// measured on the full graph. Inputs with more components than requested
/// come back as their components.
pub fn girvan_newman(
    graph: &CallGraph,
    n_clusters: usize,
    mode: DistanceMode,
) -> Result<PartitionSet, PartitionError> {
    let run = girvan_newman_run(graph, n_clusters, mode)?;
    let last = run
        .levels
        .last()
        .expect("at least the initial level")
        .clone();
    PartitionSet::from_clusters(graph, last)
}

/// Weighted modularity of a vertex partition. Zero for graphs without
/// edges.
pub fn modularity(graph: &CallGraph, clusters: &[Vec<usize>]) -> Result<f64, PartitionError> {
    let n = graph.len();
    let mut label = vec![usize::MAX; n];
    for (c, members) in clusters.iter().enumerate() {
        for &v in members {
            if v >= n || label[v] != usize::MAX {
                return Err(PartitionError::NotAPartition);
            }
            label[v] = c;
        }
    }
    if label.contains(&usize::MAX) {
        return Err(PartitionError::NotAPartition);
    }
    let w = graph.total_weight();
    if w <= 0.0 {
        return Ok(0.0);
    }
    let mut w_in = vec![0.0; clusters.len()];
    let mut w_tot = vec![0.0; clusters.len()];
    for e in &graph.edges {
        let (ca, cb) = (label[e.a], label[e.b]);
        if ca == cb {
            w_in[ca] += e.weight;
        }
        w_tot[ca] += e.weight;
        w_tot[cb] += e.weight;
    }
    Ok((0..clusters.len())
        .map(|c| w_in[c] / w - (w_tot[c] / (2.0 * w)).powi(2))
        .sum())
}

/// Weighted graph used inside Louvain; self-loops hold collapsed
/// intra-community weight.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
}

impl Level {
    fn degree(&self, v: usize) -> f64 {
        self.adj[v].iter().map(|&(_, w)| w).sum::<f64>() + 2.0 * self.self_loop[v]
    }
}

const GAIN_EPS: f64 = 1e-12;

/// Local-move phase. Returns the community of each vertex and whether
/// anything moved.
fn local_moves(level: &Level, m: f64) -> (Vec<usize>, bool) {
    let n = level.adj.len();
    let k: Vec<f64> = (0..n).map(|v| level.degree(v)).collect();
    let mut comm: Vec<usize> = (0..n).collect();
    let mut tot = k.clone();
    let mut moved_any = false;
    let mut links: BTreeMap<usize, f64> = BTreeMap::new();
    loop {
        let mut moved = false;
        for v in 0..n {
            let own = comm[v];
            links.clear();
            for &(u, w) in &level.adj[v] {
                *links.entry(comm[u]).or_insert(0.0) += w;
            }
            tot[own] -= k[v];
            let gain = |c: usize, links: &BTreeMap<usize, f64>| {
                links.get(&c).copied().unwrap_or(0.0) - tot[c] * k[v] / (2.0 * m)
            };
            let mut best = own;
            let mut best_gain = gain(own, &links);
            for &c in links.keys() {
                let g = gain(c, &links);
                if g > best_gain + GAIN_EPS {
                    best = c;
                    best_gain = g;
                }
            }
            tot[best] += k[v];
            if best != own {
                comm[v] = best;
                moved = true;
                moved_any = true;
            }
        }
        if !moved {
            break;
        }
    }
    // Renumber communities by first appearance.
    let mut renumber = BTreeMap::new();
    let mut out = Vec::with_capacity(n);
    for &c in &comm {
        let next = renumber.len();
        out.push(*renumber.entry(c).or_insert(next));
    }
    (out, moved_any)
}

fn aggregate(level: &Level, comm: &[usize]) -> Level {
    let n = comm.iter().max().map_or(0, |&c| c + 1);
    let mut self_loop = vec![0.0; n];
    let mut edges: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for v in 0..level.adj.len() {
        self_loop[comm[v]] += level.self_loop[v];
        for &(u, w) in &level.adj[v] {
            if u < v {
                continue;
            }
            let (a, b) = (comm[v], comm[u]);
            if a == b {
                self_loop[a] += w;
            } else {
                *edges.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
            }
        }
    }
    let mut adj = vec![Vec::new(); n];
    for ((a, b), w) in edges {
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    Level { adj, self_loop }
}

/// Two-phase Louvain with an ascending vertex sweep. Never returns a
/// partition scoring below the single-cluster partition.
pub fn louvain_optimal(graph: &CallGraph) -> Result<PartitionSet, PartitionError> {
    if graph.is_empty() {
        return Err(PartitionError::Empty);
    }
    let n = graph.len();
    let m = graph.total_weight();
    if m <= 0.0 {
        return PartitionSet::from_clusters(graph, (0..n).map(|v| vec![v]).collect());
    }
    let mut level = Level {
        adj: (0..n)
            .map(|v| {
                graph
                    .neighbors(v)
                    .iter()
                    .map(|&(u, e)| (u, graph.edges[e].weight))
                    .collect()
            })
            .collect(),
        self_loop: vec![0.0; n],
    };
    let mut member: Vec<usize> = (0..n).collect();
    loop {
        let (comm, moved) = local_moves(&level, m);
        if !moved {
            break;
        }
        for c in member.iter_mut() {
            *c = comm[*c];
        }
        level = aggregate(&level, &comm);
    }
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); level.adj.len()];
    for (v, &c) in member.iter().enumerate() {
        clusters[c].push(v);
    }
    let set = PartitionSet::from_clusters(graph, clusters)?;
    if set.modularity < 0.0 {
        return PartitionSet::from_clusters(graph, vec![(0..n).collect()]);
    }
    Ok(set)
}

/// Girvan-Newman partitions for N = 2 up to the Louvain cluster count,
/// from a single nested run. Empty when Louvain finds fewer than two
/// clusters.
pub fn enumerate_partition_sets(
    graph: &CallGraph,
    mode: DistanceMode,
) -> Result<Vec<PartitionSet>, PartitionError> {
    let n_opt = louvain_optimal(graph)?.n_clusters;
    if n_opt < 2 {
        return Ok(Vec::new());
    }
    let run = girvan_newman_run(graph, n_opt, mode)?;
    let mut out = Vec::new();
    for n in 2..=n_opt {
        // The first level with at least n components; inputs that start
        // with more components contribute that level for smaller n.
        let level = run
            .levels
            .iter()
            .find(|l| l.len() >= n)
            .expect("the run reaches n_opt components");
        if out
            .last()
            .is_some_and(|p: &PartitionSet| p.n_clusters == level.len())
        {
            continue;
        }
        out.push(PartitionSet::from_clusters(graph, level.clone())?);
    }
    Ok(out)
}

/// Percentage of classes that sit in offloadable clusters.
pub fn offloadable_fraction(graph: &CallGraph, partition: &PartitionSet) -> f64 {
    if graph.is_empty() {
        return 0.0;
    }
    let k: usize = partition
        .clusters
        .iter()
        .zip(&partition.offloadable)
        .filter(|(_, &ok)| ok)
        .map(|(c, _)| c.len())
        .sum();
    100.0 * k as f64 / graph.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(n: usize) -> Vec<ClassVertex> {
        (0..n).map(|i| ClassVertex::new(format!("c{i}"))).collect()
    }

    fn graph(n: usize, edges: &[(usize, usize)]) -> CallGraph {
        CallGraph::new(named(n), edges.iter().map(|&(a, b)| (a, b, 1.0))).unwrap()
    }

    #[test]
    fn parses_and_merges_parallel_edges() {
        let src = r#"{
            "vertices": [{"name": "A"}, {"name": "B"}, {"name": "C",
                "methods": [{"name": "run", "invocations": 3, "t_local_ms": 2.0}]}],
            "edges": [{"a": "A", "b": "B", "weight": 3}, {"a": "B", "b": "A", "weight": 2},
                      {"a": "B", "b": "C", "weight": 1}]
        }"#;
        let g = build_call_graph(src).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.edges().len(), 2);
        assert_eq!(g.edges()[0].weight, 5.0);
        assert_eq!(build_call_graph(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn rejects_bad_graphs() {
        let e = build_call_graph(
            r#"{"vertices":[{"name":"A"}],"edges":[{"a":"A","b":"Z","weight":1}]}"#,
        );
        assert_eq!(e, Err(PartitionError::UnknownClass("Z".into())));
        let e = build_call_graph(
            r#"{"vertices":[{"name":"A"},{"name":"B"}],"edges":[{"a":"A","b":"B","weight":-1}]}"#,
        );
        assert!(matches!(e, Err(PartitionError::BadWeight(..))));
        let e = build_call_graph(r#"{"vertices":[{"name":"A"},{"name":"A"}]}"#);
        assert!(matches!(e, Err(PartitionError::DuplicateClass(_))));
        let e = build_call_graph(
            r#"{"vertices":[{"name":"A"}],"edges":[{"a":"A","b":"A","weight":1}]}"#,
        );
        assert!(matches!(e, Err(PartitionError::SelfEdge(_))));
        let e = build_call_graph(
            r#"{"vertices":[{"name":"A","methods":[{"name":"m","invocations":1,"t_local_ms":0}]}]}"#,
        );
        assert!(matches!(e, Err(PartitionError::BadMethod { .. })));
    }

    #[test]
    fn tag_rules_use_longest_segment_prefix() {
        let g = CallGraph::new(
            vec![
                ClassVertex::new("android.view.Button"),
                ClassVertex::new("a.b.C"),
                ClassVertex::new("com.example.Main"),
                ClassVertex::new("android.viewer.X"),
            ],
            [],
        )
        .unwrap();
        let rules = parse_tag_rules(
            r#"[{"prefix":"android.view","tag":"pinned"},
                {"prefix":"a","tag":"outer"},{"prefix":"a.b","tag":"inner"}]"#,
        )
        .unwrap();
        let t = apply_tag_rules(&g, &rules);
        assert!(t.vertices()[0].is_pinned());
        assert_eq!(t.vertices()[1].tags.iter().collect::<Vec<_>>(), ["inner"]);
        assert!(t.vertices()[2].tags.is_empty());
        assert!(t.vertices()[3].tags.is_empty());
    }

    #[test]
    fn betweenness_small_cases() {
        let single = graph(2, &[(0, 1)]);
        assert_eq!(edge_betweenness(&single, DistanceMode::Hops), vec![1.0]);
        let star = graph(4, &[(0, 1), (0, 2), (0, 3)]);
        let b = edge_betweenness(&star, DistanceMode::Hops);
        assert!(b.iter().all(|&x| (x - 3.0).abs() < 1e-12), "{b:?}");
        // Square: each edge carries 1 direct pair and half of two diagonals.
        let sq = graph(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]);
        for x in edge_betweenness(&sq, DistanceMode::Hops) {
            assert!((x - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_weight_mode_prefers_heavy_edges() {
        // Triangle where the direct 0-2 edge is light: the route via 1 is
        // shorter once lengths are reciprocal weights.
        let g = CallGraph::new(named(3), [(0, 1, 10.0), (1, 2, 10.0), (0, 2, 1.0)]).unwrap();
        let b = edge_betweenness(&g, DistanceMode::InverseWeight);
        assert_eq!(b, vec![2.0, 0.0, 2.0]);
        assert_eq!(
            edge_betweenness(&g, DistanceMode::Hops),
            vec![1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn gn_edge_cases() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3)]);
        let one = girvan_newman(&g, 1, DistanceMode::Hops).unwrap();
        assert_eq!(one.clusters, vec![vec![0, 1, 2, 3]]);
        assert_eq!(one.modularity, 0.0);
        let all = girvan_newman(&g, 4, DistanceMode::Hops).unwrap();
        assert_eq!(all.n_clusters, 4);
        assert!(matches!(
            girvan_newman(&g, 5, DistanceMode::Hops),
            Err(PartitionError::TooManyClusters { .. })
        ));
        // Path: the middle edge splits first.
        let two = girvan_newman(&g, 2, DistanceMode::Hops).unwrap();
        assert_eq!(two.clusters, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn modularity_of_two_cliques() {
        let g = graph(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]);
        let q = modularity(&g, &[vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
        assert!((q - 0.5).abs() < 1e-12);
        assert_eq!(modularity(&g, &[(0..6).collect()]).unwrap(), 0.0);
        assert_eq!(
            modularity(&g, &[vec![0, 1]]),
            Err(PartitionError::NotAPartition)
        );
        let l = louvain_optimal(&g).unwrap();
        assert_eq!(l.clusters, vec![vec![0, 1, 2], vec![3, 4, 5]]);
    }

    #[test]
    fn enumerate_flags_pinned_clusters() {
        // Three triangles in a chain; the last one is pinned.
        let mut v = named(9);
        v[8].tags.insert(PINNED.into());
        let e = [
            (0, 1),
            (1, 2),
            (0, 2),
            (3, 4),
            (4, 5),
            (3, 5),
            (6, 7),
            (7, 8),
            (6, 8),
            (2, 3),
            (5, 6),
        ];
        let g = CallGraph::new(v, e.iter().map(|&(a, b)| (a, b, 1.0))).unwrap();
        let sets = enumerate_partition_sets(&g, DistanceMode::Hops).unwrap();
        assert_eq!(
            sets.iter().map(|s| s.n_clusters).collect::<Vec<_>>(),
            [2, 3]
        );
        let three = &sets[1];
        assert_eq!(three.offloadable, [true, true, false]);
        assert!((offloadable_fraction(&g, three) - 200.0 / 3.0).abs() < 1e-12);
        let untagged = graph(9, &e);
        for s in enumerate_partition_sets(&untagged, DistanceMode::Hops).unwrap() {
            assert!(s.offloadable.iter().all(|&x| x));
            assert_eq!(offloadable_fraction(&untagged, &s), 100.0);
        }
    }

    #[test]
    fn edgeless_graph() {
        let g = graph(3, &[]);
        let l = louvain_optimal(&g).unwrap();
        assert_eq!(l.n_clusters, 3);
        assert_eq!(l.modularity, 0.0);
        let gn = girvan_newman(&g, 2, DistanceMode::Hops).unwrap();
        assert_eq!(gn.n_clusters, 3);
    }
}
