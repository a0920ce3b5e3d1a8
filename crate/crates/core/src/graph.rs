//! Session graphs, the weighted global co-occurrence graph and the
//! test-time overlay used to attach unseen items.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::dataset::Session;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("edge ({0}, {1}) references a node outside the declared node count")]
    NodeOutOfRange(usize, usize),
}

#[inline]
fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Adjacent distinct-item pairs of an item sequence, as ordered pairs.
fn adjacent_pairs(items: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
    items.windows(2).filter(|w| w[0] != w[1]).map(|w| ordered(w[0], w[1]))
}

/// Undirected, unweighted graph of one session's item transitions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SessionGraph {
    pub nodes: BTreeSet<usize>,
    pub edges: BTreeSet<(usize, usize)>,
}

pub fn build_session_graph(session: &Session) -> SessionGraph {
    SessionGraph { nodes: session.items.iter().copied().collect(), edges: adjacent_pairs(&session.items).collect() }
}

/// Weighted undirected item graph. Each unordered pair is stored once as
/// `(min, max)`; the weight counts adjacent co-occurrences over all sessions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalGraph {
    num_nodes: usize,
    edges: BTreeMap<(usize, usize), u64>,
    degree: Vec<u64>,
}

impl GlobalGraph {
    pub fn new(num_nodes: usize) -> Self {
        Self { num_nodes, edges: BTreeMap::new(), degree: vec![0; num_nodes] }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Sum of edge weights (each unordered edge counted once).
    pub fn total_weight(&self) -> u64 {
        self.edges.values().sum()
    }

    pub fn weight(&self, i: usize, j: usize) -> u64 {
        self.edges.get(&ordered(i, j)).copied().unwrap_or(0)
    }

    pub fn degree_weight(&self, i: usize) -> u64 {
        self.degree.get(i).copied().unwrap_or(0)
    }

    pub fn degree_weights(&self) -> &[u64] {
        &self.degree
    }

    /// Edges in `(i, j, w)` form with `i < j`, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.edges.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    /// Grows the node set; existing edges are untouched.
    pub fn ensure_nodes(&mut self, num_nodes: usize) {
        if num_nodes > self.num_nodes {
            self.num_nodes = num_nodes;
            self.degree.resize(num_nodes, 0);
        }
    }

    /// Adds `w` to the weight of `{i, j}`. Self-pairs are ignored.
    pub fn add_edge(&mut self, i: usize, j: usize, w: u64) {
        if i == j || w == 0 {
            return;
        }
        self.ensure_nodes(i.max(j) + 1);
        *self.edges.entry(ordered(i, j)).or_insert(0) += w;
        self.degree[i] += w;
        self.degree[j] += w;
    }

    /// Sums another graph's weights into this one.
    pub fn merge(&mut self, other: &GlobalGraph) {
        self.ensure_nodes(other.num_nodes);
        for (i, j, w) in other.edges() {
            self.add_edge(i, j, w);
        }
    }

    /// Per-node neighbor lists `(neighbor, weight)`, neighbors ascending.
    pub fn adjacency(&self) -> Vec<Vec<(usize, u64)>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for (i, j, w) in self.edges() {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        adj.iter_mut().for_each(|a| a.sort_unstable());
        adj
    }

    /// Edge-list export: a `#nodes N` header, then `i j w` per edge with `i < j`.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("#nodes {}\n", self.num_nodes);
        for (i, j, w) in self.edges() {
            let _ = writeln!(out, "{i} {j} {w}");
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut graph: Option<GlobalGraph> = None;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#nodes") {
                let n = rest.trim().parse::<usize>().map_err(|_| GraphError::Parse {
                    line: line_no,
                    message: format!("bad node count `{}`", rest.trim()),
                })?;
                graph = Some(GlobalGraph::new(n));
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let g = graph
                .as_mut()
                .ok_or(GraphError::Parse { line: line_no, message: "edge before `#nodes` header".into() })?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parsed = (parts.len() == 3)
                .then(|| Some((parts[0].parse().ok()?, parts[1].parse().ok()?, parts[2].parse().ok()?)))
                .flatten();
            let (i, j, w): (usize, usize, u64) = parsed.ok_or_else(|| GraphError::Parse {
                line: line_no,
                message: format!("expected `i j w`, found `{line}`"),
            })?;
            if i >= g.num_nodes || j >= g.num_nodes {
                return Err(GraphError::NodeOutOfRange(i, j));
            }
            if i == j || w == 0 {
                return Err(GraphError::Parse { line: line_no, message: "self-loop or zero weight".into() });
            }
            g.add_edge(i, j, w);
        }
        graph.ok_or(GraphError::Parse { line: 0, message: "missing `#nodes` header".into() })
    }
}

/// Aggregates sessions into the global graph: every adjacent pair of
/// distinct items adds 1 to that pair's weight.
pub fn build_global_graph(sessions: &[Session], num_nodes: usize) -> GlobalGraph {
    let mut graph = GlobalGraph::new(num_nodes);
    for s in sessions {
        for (i, j) in adjacent_pairs(&s.items) {
            graph.add_edge(i, j, 1);
        }
    }
    graph
}

/// Outcome of attaching a session's items to the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integration {
    /// Number of edge increments applied.
    Added(usize),
    /// Every item is unseen; nothing to attach to. Callers fall back to the
    /// most frequent cluster.
    AllUnseen,
    /// No unseen items; the graph is unchanged.
    NothingUnseen,
}

fn unseen_pairs<'a>(items: &'a [usize], seen: &'a dyn Fn(usize) -> bool) -> (Integration, Vec<(usize, usize)>) {
    let any_unseen = items.iter().any(|&i| !seen(i));
    let any_seen = items.iter().any(|&i| seen(i));
    match (any_unseen, any_seen) {
        (false, _) => (Integration::NothingUnseen, Vec::new()),
        (true, false) => (Integration::AllUnseen, Vec::new()),
        (true, true) => {
            let pairs: Vec<_> = adjacent_pairs(items).filter(|&(a, b)| !seen(a) || !seen(b)).collect();
            (Integration::Added(pairs.len()), pairs)
        }
    }
}

/// Returns a copy of `graph` with the session's unseen-item edges added.
/// The input graph is not modified.
pub fn integrate_unseen(
    graph: &GlobalGraph,
    session: &[usize],
    seen: impl Fn(usize) -> bool,
) -> (GlobalGraph, Integration) {
    let (outcome, pairs) = unseen_pairs(session, &seen);
    let mut updated = graph.clone();
    for (i, j) in pairs {
        updated.add_edge(i, j, 1);
    }
    (updated, outcome)
}

/// Read access to item neighborhoods, shared by the global graph and overlay.
pub trait Neighborhood {
    /// Whether `item` is a registered node.
    fn contains(&self, item: usize) -> bool;
    /// `(neighbor, weight)` pairs of `item`.
    fn neighbors(&self, item: usize) -> Vec<(usize, u64)>;
}

impl Neighborhood for GlobalGraph {
    fn contains(&self, item: usize) -> bool {
        item < self.num_nodes
    }

    fn neighbors(&self, item: usize) -> Vec<(usize, u64)> {
        // BTreeMap has no per-node index; scan is fine at this scale
        self.edges()
            .filter_map(|(i, j, w)| match (i == item, j == item) {
                (true, _) => Some((j, w)),
                (_, true) => Some((i, w)),
                _ => None,
            })
            .collect()
    }
}

/// Test-time edges layered over a read-only base graph.
///
/// The base graph is never mutated; dropping or [`reset`](Self::reset)ting
/// the overlay discards every added edge.
#[derive(Debug, Clone)]
pub struct GraphOverlay<'g> {
    base: &'g GlobalGraph,
    base_adj: Vec<Vec<(usize, u64)>>,
    extra: BTreeMap<usize, BTreeMap<usize, u64>>,
    num_nodes: usize,
}

impl<'g> GraphOverlay<'g> {
    /// `num_nodes` registers the full catalog; items at or beyond the base
    /// graph's node count start with no edges.
    pub fn new(base: &'g GlobalGraph, num_nodes: usize) -> Self {
        Self { base, base_adj: base.adjacency(), extra: BTreeMap::new(), num_nodes: num_nodes.max(base.num_nodes()) }
    }

    pub fn base(&self) -> &GlobalGraph {
        self.base
    }

    pub fn reset(&mut self) {
        self.extra.clear();
    }

    pub fn num_added_edges(&self) -> usize {
        self.extra.values().map(BTreeMap::len).sum::<usize>() / 2
    }

    pub fn integrate(&mut self, items: &[usize], seen: impl Fn(usize) -> bool) -> Integration {
        let (outcome, pairs) = unseen_pairs(items, &seen);
        for (i, j) in pairs {
            self.num_nodes = self.num_nodes.max(j + 1);
            *self.extra.entry(i).or_default().entry(j).or_insert(0) += 1;
            *self.extra.entry(j).or_default().entry(i).or_insert(0) += 1;
        }
        outcome
    }
}

impl Neighborhood for GraphOverlay<'_> {
    fn contains(&self, item: usize) -> bool {
        item < self.num_nodes
    }

    fn neighbors(&self, item: usize) -> Vec<(usize, u64)> {
        let mut merged: BTreeMap<usize, u64> = BTreeMap::new();
        if let Some(base) = self.base_adj.get(item) {
            merged.extend(base.iter().copied());
        }
        if let Some(extra) = self.extra.get(&item) {
            for (&n, &w) in extra {
                *merged.entry(n).or_insert(0) += w;
            }
        }
        merged.into_iter().collect()
    }
}
