//! Full-catalog ranking metrics and the test-time protocol for items the
//! training graph never saw.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::community::{assign_cluster, Partition};
use crate::dataset::{sequence_split, Session, Split};
use crate::graph::{GlobalGraph, GraphOverlay};
use crate::model::{score, ModelError, ModelParams};
use crate::prompt::{ClusterMap, PromptContext, PromptedEmbeddings, SessionPromptIndex};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no instances to evaluate")]
    Empty,
    #[error("cutoff k must be at least 1")]
    ZeroCutoff,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Community(#[from] crate::community::CommunityError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// `1 + #{k ≠ label : z_k ≥ z_label}`: tied items rank above the label.
pub fn rank_of_label(z: &[f64], label: usize) -> usize {
    let target = z[label];
    1 + z.iter().enumerate().filter(|&(k, &s)| k != label && s >= target).count()
}

fn check(ranks: &[usize], k: usize) -> Result<(), EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::Empty);
    }
    if k == 0 {
        return Err(EvalError::ZeroCutoff);
    }
    Ok(())
}

pub fn mrr_at_k(ranks: &[usize], k: usize) -> Result<f64, EvalError> {
    check(ranks, k)?;
    let sum: f64 = ranks.iter().filter(|&&r| r <= k).map(|&r| 1.0 / r as f64).sum();
    Ok(sum / ranks.len() as f64)
}

pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64, EvalError> {
    check(ranks, k)?;
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub ks: Vec<usize>,
    pub metrics: BTreeMap<usize, Metrics>,
    pub n_instances: usize,
    pub config_hash: String,
    /// Per-instance ranks in evaluation order; not part of the JSON report.
    #[serde(skip)]
    pub ranks: Vec<usize>,
}

impl EvalReport {
    pub fn from_ranks(split: Split, ks: &[usize], ranks: Vec<usize>, config_hash: &str) -> Result<Self, EvalError> {
        let mut metrics = BTreeMap::new();
        for &k in ks {
            metrics.insert(k, Metrics { mrr: mrr_at_k(&ranks, k)?, recall: recall_at_k(&ranks, k)? });
        }
        Ok(Self {
            split,
            ks: ks.to_vec(),
            metrics,
            n_instances: ranks.len(),
            config_hash: config_hash.to_string(),
            ranks,
        })
    }

    pub fn mrr(&self, k: usize) -> Option<f64> {
        self.metrics.get(&k).map(|m| m.mrr)
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.metrics.get(&k).map(|m| m.recall)
    }

    /// Plain-text table, one row per cutoff.
    pub fn table(&self) -> String {
        let mut out = format!("{:<6}{:>10}{:>10}\n", "k", "MRR", "Recall");
        for (k, m) in &self.metrics {
            out.push_str(&format!("{:<6}{:>10.4}{:>10.4}\n", k, m.mrr, m.recall));
        }
        out.push_str(&format!("({} instances, {} split)\n", self.n_instances, self.split));
        out
    }

    /// Writes `index\trank` lines.
    pub fn write_ranks(&self, path: &Path) -> Result<(), EvalError> {
        let io = |source| EvalError::Io { path: path.display().to_string(), source };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(f, "index\trank").map_err(io)?;
        for (i, r) in self.ranks.iter().enumerate() {
            writeln!(f, "{i}\t{r}").map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

/// Training-time artifacts the evaluation reads but never modifies.
#[derive(Debug, Clone, Copy)]
pub struct EvalInputs<'a> {
    pub graph: &'a GlobalGraph,
    pub partition: &'a Partition,
    pub session_index: &'a SessionPromptIndex,
    /// Items `>= num_seen_items` never occurred in training.
    pub num_seen_items: usize,
}

/// Ranks every next-item instance of `sessions` against the full catalog.
///
/// Sessions are replayed in order. Before each prediction the newest prefix
/// edge is added to an overlay graph local to this call, and every unseen
/// prefix item is reassigned to the weighted-majority cluster of its
/// clustered neighbors (or the most frequent cluster). The label is never
/// attached before it is scored. Repeated calls give identical reports.
pub fn evaluate(
    params: &ModelParams,
    inputs: EvalInputs<'_>,
    sessions: &[Session],
    split: Split,
    ks: &[usize],
    config_hash: &str,
) -> Result<EvalReport, EvalError> {
    let n = params.num_items();
    let seen_limit = inputs.num_seen_items;
    let seen = |i: usize| i < seen_limit;
    let mut overlay = GraphOverlay::new(inputs.graph, n);
    let mut clusters = ClusterMap::from_partition(inputs.partition, n);
    let items = params.normalized_items();
    let variant = params.variant();
    let mut cache: BTreeMap<PromptContext, PromptedEmbeddings> = BTreeMap::new();
    let mut ranks = Vec::new();

    for session in sessions {
        for inst in sequence_split(session) {
            let len = inst.prefix.len();
            if len >= 2 {
                overlay.integrate(&inst.prefix[len - 2..], seen);
            }
            if variant.cluster {
                for &item in inst.prefix.iter().filter(|&&i| !seen(i)) {
                    let c = assign_cluster(inputs.partition, item, &overlay)?;
                    if c != clusters.get(item) {
                        clusters.set(item, c);
                        for pe in cache.values_mut() {
                            pe.refresh_item(&items, &clusters, &params.prompts.gate, item);
                        }
                    }
                }
            }
            let ctx = PromptContext::for_instance(variant, inputs.session_index, &inst);
            let pe = cache.entry(ctx).or_insert_with(|| params.prompted(&items, &clusters, ctx));
            let s = params.encode_session(&inst.prefix, pe)?;
            let z = score(&s, pe);
            ranks.push(rank_of_label(&z, inst.label));
        }
    }
    if ranks.is_empty() {
        return Err(EvalError::Empty);
    }
    EvalReport::from_ranks(split, ks, ranks, config_hash)
}
