//! Item cluster detection on the global graph.
//!
//! Quality is weighted modularity with a resolution parameter γ:
//! `Q = Σ_c [ e_c / m − γ (d_c / 2m)² ]`, where `m` is the total edge weight,
//! `e_c` the weight inside cluster `c` and `d_c` its summed weighted degree.

mod leiden;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GlobalGraph, Neighborhood};

pub use leiden::{leiden, leiden_traced, Phase, PhaseQuality};

#[derive(Debug, Error)]
pub enum CommunityError {
    #[error("resolution must be positive and finite, got {0}")]
    InvalidResolution(f64),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("item {0} is neither clustered nor registered in the graph")]
    UnknownItem(usize),
    #[error("partition covers {partition} nodes but the graph has {graph}")]
    SizeMismatch { partition: usize, graph: usize },
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

/// Item → cluster assignment with contiguous cluster indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    num_clusters: usize,
    cluster_sizes: Vec<usize>,
    most_frequent_cluster: usize,
}

impl Partition {
    /// Builds a partition from arbitrary labels, renumbering clusters
    /// `0..k` in order of first appearance.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
        let mut order = Vec::new();
        let assignment: Vec<usize> = labels
            .iter()
            .map(|&l| {
                *remap.entry(l).or_insert_with(|| {
                    order.push(l);
                    order.len() - 1
                })
            })
            .collect();
        let num_clusters = order.len();
        let mut cluster_sizes = vec![0; num_clusters];
        for &c in &assignment {
            cluster_sizes[c] += 1;
        }
        // max_by_key keeps the last maximum; scan explicitly for lowest index
        let mut most_frequent_cluster = 0;
        for (c, &size) in cluster_sizes.iter().enumerate() {
            if size > cluster_sizes[most_frequent_cluster] {
                most_frequent_cluster = c;
            }
        }
        Self { assignment, num_clusters, cluster_sizes, most_frequent_cluster }
    }

    pub fn singletons(n: usize) -> Self {
        Self::from_labels(&(0..n).collect::<Vec<_>>())
    }

    pub fn single_cluster(n: usize) -> Self {
        Self::from_labels(&vec![0; n])
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn cluster_sizes(&self) -> &[usize] {
        &self.cluster_sizes
    }

    pub fn most_frequent_cluster(&self) -> usize {
        self.most_frequent_cluster
    }

    pub fn cluster_of(&self, item: usize) -> Option<usize> {
        self.assignment.get(item).copied()
    }

    /// Members of every cluster, ascending.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (node, &c) in self.assignment.iter().enumerate() {
            out[c].push(node);
        }
        out
    }
}

/// Weighted modularity of `partition` at `resolution`. Zero for a graph
/// without edges.
pub fn modularity(graph: &GlobalGraph, partition: &Partition, resolution: f64) -> f64 {
    assert_eq!(partition.len(), graph.num_nodes(), "partition must cover every node");
    let m = graph.total_weight() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let k = partition.num_clusters();
    let mut internal = vec![0.0; k];
    let mut degree = vec![0.0; k];
    for (i, j, w) in graph.edges() {
        let ci = partition.assignment[i];
        if ci == partition.assignment[j] {
            internal[ci] += w as f64;
        }
    }
    for (node, &d) in graph.degree_weights().iter().enumerate() {
        degree[partition.assignment[node]] += d as f64;
    }
    internal
        .iter()
        .zip(&degree)
        .map(|(&e, &d)| {
            let share = d / (2.0 * m);
            e / m - resolution * share * share
        })
        .sum()
}

/// Cluster of `item`: its partition entry when clustered, otherwise the
/// weighted majority cluster among its clustered neighbors (ties → lower
/// index), otherwise the most frequent cluster.
pub fn assign_cluster(partition: &Partition, item: usize, graph: &impl Neighborhood) -> Result<usize, CommunityError> {
    if let Some(c) = partition.cluster_of(item) {
        return Ok(c);
    }
    if !graph.contains(item) {
        return Err(CommunityError::UnknownItem(item));
    }
    let mut votes: BTreeMap<usize, u64> = BTreeMap::new();
    for (neighbor, w) in graph.neighbors(item) {
        if let Some(c) = partition.cluster_of(neighbor) {
            *votes.entry(c).or_insert(0) += w;
        }
    }
    let mut best: Option<(usize, u64)> = None;
    for (c, w) in votes {
        if best.is_none_or(|(_, bw)| w > bw) {
            best = Some((c, w));
        }
    }
    Ok(best.map_or(partition.most_frequent_cluster, |(c, _)| c))
}

/// On-disk partition artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub resolution: f64,
    pub seed: u64,
    pub num_clusters: usize,
    pub assignment: Vec<usize>,
    pub quality: f64,
    /// Content hash of the split files the graph was built from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_hash: Option<String>,
}

impl PartitionFile {
    pub fn new(partition: &Partition, resolution: f64, seed: u64, quality: f64) -> Self {
        Self {
            resolution,
            seed,
            num_clusters: partition.num_clusters(),
            assignment: partition.assignment().to_vec(),
            quality,
            source_hash: None,
        }
    }

    pub fn partition(&self) -> Partition {
        Partition::from_labels(&self.assignment)
    }

    pub fn save(&self, path: &Path) -> Result<(), CommunityError> {
        let err = |message: String| CommunityError::File { path: path.display().to_string(), message };
        let json = serde_json::to_string_pretty(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CommunityError> {
        let err = |message: String| CommunityError::File { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let file: PartitionFile = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if file.num_clusters != file.partition().num_clusters() {
            return Err(err("num_clusters disagrees with assignment".into()));
        }
        Ok(file)
    }
}
