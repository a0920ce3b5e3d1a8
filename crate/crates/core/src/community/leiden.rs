//! Leiden community detection (Traag, Waltman & van Eck, 2019) under
//! modularity with resolution.
//!
//! Each pass runs fast local moving, refines every community into
//! well-connected sub-communities, and aggregates the graph on the refined
//! partition while carrying the unrefined partition over as the starting
//! point on the aggregate. Passes repeat from the previous result until the
//! partition stops changing, which leaves every node locally optimal.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CommunityError, Partition};
use crate::graph::GlobalGraph;

/// Randomness of the refinement merge: candidates are drawn with
/// probability ∝ exp(ΔQ / θ).
const THETA: f64 = 0.01;
const MAX_PASSES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    LocalMove,
    Refine,
    Aggregate,
    SplitDisconnected,
}

/// Modularity of the working (unrefined) partition after a phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseQuality {
    pub pass: usize,
    pub phase: Phase,
    pub quality: f64,
}

/// Weighted graph at some aggregation level. Node weights are summed
/// original degrees; `self_loop` holds weight internal to an aggregate node.
#[derive(Debug, Clone)]
struct WorkGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
    node_weight: Vec<f64>,
    /// Twice the total edge weight.
    two_m: f64,
}

impl WorkGraph {
    fn from_global(graph: &GlobalGraph) -> Self {
        let adj: Vec<Vec<(usize, f64)>> =
            graph.adjacency().into_iter().map(|row| row.into_iter().map(|(j, w)| (j, w as f64)).collect()).collect();
        let n = adj.len();
        Self {
            adj,
            self_loop: vec![0.0; n],
            node_weight: graph.degree_weights().iter().map(|&d| d as f64).collect(),
            two_m: 2.0 * graph.total_weight() as f64,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// Modularity of `part` on this level.
    fn quality(&self, part: &[usize], gamma: f64) -> f64 {
        if self.two_m == 0.0 {
            return 0.0;
        }
        let k = part.iter().max().map_or(0, |&c| c + 1);
        let mut internal = vec![0.0; k];
        let mut degree = vec![0.0; k];
        for v in 0..self.len() {
            internal[part[v]] += self.self_loop[v];
            degree[part[v]] += self.node_weight[v];
            for &(u, w) in &self.adj[v] {
                if u > v && part[u] == part[v] {
                    internal[part[v]] += w;
                }
            }
        }
        let m = self.two_m / 2.0;
        internal.iter().zip(&degree).map(|(&e, &d)| e / m - gamma * (d / self.two_m).powi(2)).sum()
    }

    /// Collapses each group of `groups` (labels `0..k`) into one node.
    fn aggregate(&self, groups: &[usize], k: usize) -> WorkGraph {
        let mut self_loop = vec![0.0; k];
        let mut node_weight = vec![0.0; k];
        let mut rows: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); k];
        for v in 0..self.len() {
            let gv = groups[v];
            self_loop[gv] += self.self_loop[v];
            node_weight[gv] += self.node_weight[v];
            for &(u, w) in &self.adj[v] {
                let gu = groups[u];
                if gu == gv {
                    if u > v {
                        self_loop[gv] += w;
                    }
                } else {
                    *rows[gv].entry(gu).or_insert(0.0) += w;
                }
            }
        }
        WorkGraph {
            adj: rows.into_iter().map(|r| r.into_iter().collect()).collect(),
            self_loop,
            node_weight,
            two_m: self.two_m,
        }
    }
}

/// Relabels to `0..k` by first appearance; returns `k`.
fn compact(labels: &mut [usize]) -> usize {
    let mut map = std::collections::HashMap::new();
    for l in labels.iter_mut() {
        let next = map.len();
        *l = *map.entry(*l).or_insert(next);
    }
    map.len()
}

fn gain_tolerance(two_m: f64) -> f64 {
    1e-12 * two_m.max(1.0)
}

/// Queue-based local moving. Returns whether any node moved.
fn move_nodes_fast<R: Rng>(g: &WorkGraph, part: &mut [usize], gamma: f64, rng: &mut R) -> bool {
    let n = g.len();
    let tol = gain_tolerance(g.two_m);
    let mut comm_weight = vec![0.0; n];
    let mut comm_size = vec![0usize; n];
    for v in 0..n {
        comm_weight[part[v]] += g.node_weight[v];
        comm_size[part[v]] += 1;
    }
    let mut empty: BTreeSet<usize> = (0..n).filter(|&c| comm_size[c] == 0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue: VecDeque<usize> = order.into();
    let mut queued = vec![true; n];
    let mut link = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut moved = false;

    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let current = part[v];
        let kv = g.node_weight[v];
        for &(u, w) in &g.adj[v] {
            let c = part[u];
            if link[c] == 0.0 {
                touched.push(c);
            }
            link[c] += w;
        }
        comm_weight[current] -= kv;
        comm_size[current] -= 1;

        let gain = |c: usize, link_c: f64| link_c - gamma * kv * comm_weight[c] / g.two_m;
        let stay = gain(current, link[current]);
        let mut best = current;
        let mut best_gain = stay;
        touched.sort_unstable();
        touched.dedup();
        for &c in &touched {
            if c == current {
                continue;
            }
            let gc = gain(c, link[c]);
            if gc > best_gain + tol || (best != current && (gc - best_gain).abs() <= tol && c < best) {
                best = c;
                best_gain = gc;
            }
        }
        // an empty community scores 0
        if comm_size[current] > 0 && best_gain < -tol {
            if let Some(&c) = empty.iter().next() {
                best = c;
            }
        }
        for &c in &touched {
            link[c] = 0.0;
        }
        touched.clear();

        comm_weight[best] += kv;
        comm_size[best] += 1;
        if best != current {
            moved = true;
            part[v] = best;
            empty.remove(&best);
            if comm_size[current] == 0 {
                empty.insert(current);
            }
            for &(u, _) in &g.adj[v] {
                if !queued[u] && part[u] != best {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    moved
}

/// Refines each community of `part` into sub-communities by merging
/// singletons into well-connected refined groups of the same community.
fn refine<R: Rng>(g: &WorkGraph, part: &[usize], gamma: f64, rng: &mut R) -> Vec<usize> {
    let n = g.len();
    let tol = gain_tolerance(g.two_m);
    let mut refined: Vec<usize> = (0..n).collect();
    let k = part.iter().max().map_or(0, |&c| c + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for v in 0..n {
        members[part[v]].push(v);
    }
    let mut comm_total = vec![0.0; k];
    for v in 0..n {
        comm_total[part[v]] += g.node_weight[v];
    }
    // refined-group state, indexed by group id (initially node id)
    let mut group_weight = g.node_weight.clone();
    let mut group_size = vec![1usize; n];
    // weight from a refined group to the rest of its community
    let mut group_external: Vec<f64> =
        (0..n).map(|v| g.adj[v].iter().filter(|&&(u, _)| part[u] == part[v]).map(|&(_, w)| w).sum()).collect();
    let node_external = group_external.clone();
    let mut link = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();

    for (c, nodes) in members.iter_mut().enumerate() {
        nodes.shuffle(rng);
        let total = comm_total[c];
        for &v in nodes.iter() {
            if group_size[refined[v]] > 1 {
                continue;
            }
            let kv = g.node_weight[v];
            if node_external[v] + tol < gamma * kv * (total - kv) / g.two_m {
                continue;
            }
            for &(u, w) in &g.adj[v] {
                if part[u] == c {
                    let t = refined[u];
                    if link[t] == 0.0 {
                        touched.push(t);
                    }
                    link[t] += w;
                }
            }
            touched.sort_unstable();
            touched.dedup();
            let own = refined[v];
            let mut candidates: Vec<(usize, f64)> = vec![(own, 0.0)];
            for &t in &touched {
                if t == own {
                    continue;
                }
                let kt = group_weight[t];
                let well_connected = group_external[t] + tol >= gamma * kt * (total - kt) / g.two_m;
                let delta = link[t] - gamma * kv * kt / g.two_m;
                if well_connected && delta >= -tol {
                    candidates.push((t, delta));
                }
            }
            let chosen = if candidates.len() == 1 {
                own
            } else {
                let m = g.two_m / 2.0;
                let top = candidates.iter().map(|&(_, d)| d / m).fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = candidates.iter().map(|&(_, d)| ((d / m - top) / THETA).exp()).collect();
                let total_w: f64 = weights.iter().sum();
                let mut draw = rng.gen::<f64>() * total_w;
                let mut pick = candidates.len() - 1;
                for (idx, w) in weights.iter().enumerate() {
                    if draw < *w {
                        pick = idx;
                        break;
                    }
                    draw -= w;
                }
                candidates[pick].0
            };
            if chosen != own {
                let to_chosen = link[chosen];
                group_weight[chosen] += kv;
                group_size[chosen] += 1;
                group_external[chosen] += node_external[v] - 2.0 * to_chosen;
                group_weight[own] = 0.0;
                group_size[own] = 0;
                group_external[own] = 0.0;
                refined[v] = chosen;
            }
            for &t in &touched {
                link[t] = 0.0;
            }
            touched.clear();
        }
    }
    refined
}

/// Splits every community that is not connected into its components.
/// Returns whether anything was split.
fn split_disconnected(adj: &[Vec<(usize, u64)>], labels: &mut [usize]) -> bool {
    let n = labels.len();
    let mut component = vec![usize::MAX; n];
    let mut seen_label = std::collections::HashMap::new();
    let mut next = 0;
    let mut split = false;
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let label = labels[start];
        if seen_label.insert(label, ()).is_some() {
            split = true;
        }
        component[start] = next;
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &(u, _) in &adj[v] {
                if component[u] == usize::MAX && labels[u] == label {
                    component[u] = next;
                    stack.push(u);
                }
            }
        }
        next += 1;
    }
    labels.copy_from_slice(&component);
    split
}

/// One Leiden pass from `init` on the original graph; returns flat labels.
fn leiden_pass<R: Rng>(
    base: &WorkGraph,
    init: &[usize],
    gamma: f64,
    rng: &mut R,
    pass: usize,
    mut trace: Option<&mut Vec<PhaseQuality>>,
) -> Vec<usize> {
    let mut graph = base.clone();
    let mut part = init.to_vec();
    compact(&mut part);
    // original node → node of the current level
    let mut level_of: Vec<usize> = (0..base.len()).collect();
    let mut record = |phase: Phase, g: &WorkGraph, p: &[usize]| {
        if let Some(t) = trace.as_deref_mut() {
            t.push(PhaseQuality { pass, phase, quality: g.quality(p, gamma) });
        }
    };
    loop {
        move_nodes_fast(&graph, &mut part, gamma, rng);
        record(Phase::LocalMove, &graph, &part);
        let num_comms = compact(&mut part);
        if num_comms == graph.len() {
            break;
        }
        let mut refined = refine(&graph, &part, gamma, rng);
        let mut num_refined = compact(&mut refined);
        record(Phase::Refine, &graph, &part);
        if num_refined == graph.len() {
            // no merges inside any community: aggregate on the partition itself
            refined = part.clone();
            num_refined = num_comms;
        }
        let next = graph.aggregate(&refined, num_refined);
        let mut next_part = vec![0; num_refined];
        for v in 0..graph.len() {
            next_part[refined[v]] = part[v];
        }
        for l in level_of.iter_mut() {
            *l = refined[*l];
        }
        graph = next;
        part = next_part;
        record(Phase::Aggregate, &graph, &part);
    }
    level_of.iter().map(|&l| part[l]).collect()
}

fn validate(graph: &GlobalGraph, resolution: f64) -> Result<(), CommunityError> {
    if graph.num_nodes() == 0 {
        return Err(CommunityError::EmptyGraph);
    }
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(CommunityError::InvalidResolution(resolution));
    }
    Ok(())
}

/// Partitions `graph` maximizing modularity at `resolution`.
///
/// Deterministic for a given seed. Every returned cluster induces a
/// connected subgraph and no single-node move improves modularity.
pub fn leiden(graph: &GlobalGraph, resolution: f64, seed: u64) -> Result<Partition, CommunityError> {
    run(graph, resolution, seed, None)
}

/// [`leiden`] that also records modularity after every phase.
pub fn leiden_traced(
    graph: &GlobalGraph,
    resolution: f64,
    seed: u64,
) -> Result<(Partition, Vec<PhaseQuality>), CommunityError> {
    let mut trace = Vec::new();
    let p = run(graph, resolution, seed, Some(&mut trace))?;
    Ok((p, trace))
}

fn run(
    graph: &GlobalGraph,
    resolution: f64,
    seed: u64,
    mut trace: Option<&mut Vec<PhaseQuality>>,
) -> Result<Partition, CommunityError> {
    validate(graph, resolution)?;
    let n = graph.num_nodes();
    if graph.total_weight() == 0 {
        return Ok(Partition::singletons(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = WorkGraph::from_global(graph);
    let adj = graph.adjacency();
    let mut labels: Vec<usize> = (0..n).collect();
    for pass in 0..MAX_PASSES {
        let mut next = leiden_pass(&base, &labels, resolution, &mut rng, pass, trace.as_deref_mut());
        split_disconnected(&adj, &mut next);
        if let Some(t) = trace.as_deref_mut() {
            t.push(PhaseQuality { pass, phase: Phase::SplitDisconnected, quality: base.quality(&next, resolution) });
        }
        let converged = Partition::from_labels(&next) == Partition::from_labels(&labels);
        labels = next;
        if converged {
            break;
        }
    }
    Ok(Partition::from_labels(&labels))
}
