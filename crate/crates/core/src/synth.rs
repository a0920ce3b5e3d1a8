//! Planted-cluster session generator for desk-scale experiments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::stream_rng;

const EPOCH_START: i64 = 1_600_000_000;
const CLICK_SPACING: i64 = 60;
const SESSION_SPACING: i64 = 86_400;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("num_items ({items}) must be a positive multiple of num_clusters ({clusters})")]
    Indivisible { items: usize, clusters: usize },
    #[error("noise must lie in [0, 1), got {0}")]
    Noise(f64),
    #[error("session lengths must satisfy 2 <= min <= max <= cluster size ({0})")]
    Lengths(usize),
    #[error("need at least one user and one session per user")]
    Empty,
    #[error("cannot write {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_items: usize,
    pub num_clusters: usize,
    pub num_users: usize,
    pub sessions_per_user: usize,
    pub noise: f64,
    pub seed: u64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_items: 500,
            num_clusters: 10,
            num_users: 200,
            sessions_per_user: 10,
            noise: 0.2,
            seed: 0,
            min_len: 3,
            max_len: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.num_clusters == 0 || self.num_items == 0 || !self.num_items.is_multiple_of(self.num_clusters) {
            return Err(SynthError::Indivisible { items: self.num_items, clusters: self.num_clusters });
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(SynthError::Noise(self.noise));
        }
        let size = self.num_items / self.num_clusters;
        if self.min_len < 2 || self.min_len > self.max_len || self.max_len > size {
            return Err(SynthError::Lengths(size));
        }
        if self.num_users == 0 || self.sessions_per_user == 0 {
            return Err(SynthError::Empty);
        }
        Ok(())
    }

    /// Planted cluster of item `k`.
    pub fn cluster_of(&self, item: usize) -> usize {
        item % self.num_clusters
    }
}

pub fn item_id(k: usize) -> String {
    format!("i{k}")
}

pub fn user_id(k: usize) -> String {
    format!("u{k}")
}

/// Raw `(user, item, timestamp)` rows plus the planted cluster per session.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub rows: Vec<(usize, usize, i64)>,
    pub session_clusters: Vec<usize>,
}

/// Every session draws one planted cluster uniformly, then distinct items
/// from it; each drawn item is replaced by a uniform random item with
/// probability `noise`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData, SynthError> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 0);
    let size = cfg.num_items / cfg.num_clusters;
    let mut rows = Vec::new();
    let mut session_clusters = Vec::new();
    for u in 0..cfg.num_users {
        for s in 0..cfg.sessions_per_user {
            let c = rng.gen_range(0..cfg.num_clusters);
            let len = rng.gen_range(cfg.min_len..=cfg.max_len);
            let start = EPOCH_START + ((u * cfg.sessions_per_user + s) as i64) * SESSION_SPACING;
            for (p, slot) in sample(&mut rng, size, len).into_iter().enumerate() {
                let mut item = c + slot * cfg.num_clusters;
                if rng.gen::<f64>() < cfg.noise {
                    item = rng.gen_range(0..cfg.num_items);
                }
                rows.push((u, item, start + p as i64 * CLICK_SPACING));
            }
            session_clusters.push(c);
        }
    }
    Ok(SynthData { rows, session_clusters })
}

/// Ground-truth clusters keyed by raw item id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPartition {
    pub num_clusters: usize,
    pub item_ids: Vec<String>,
    pub assignment: Vec<usize>,
}

pub fn planted_partition(cfg: &SynthConfig) -> PlantedPartition {
    PlantedPartition {
        num_clusters: cfg.num_clusters,
        item_ids: (0..cfg.num_items).map(item_id).collect(),
        assignment: (0..cfg.num_items).map(|k| cfg.cluster_of(k)).collect(),
    }
}

pub fn to_tsv(data: &SynthData) -> String {
    let mut out = String::from("user_id\titem_id\ttimestamp\n");
    for &(u, i, t) in &data.rows {
        let _ = writeln!(out, "{}\t{}\t{t}", user_id(u), item_id(i));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthFiles {
    pub interactions: PathBuf,
    pub planted: PathBuf,
}

/// Writes `interactions.tsv` and `planted.json` into `dir`.
fn io(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |e| SynthError::Io { path: path.to_path_buf(), message: e.to_string() }
}

pub fn write(cfg: &SynthConfig, dir: &Path) -> Result<SynthFiles, SynthError> {
    let data = generate(cfg)?;
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let files = SynthFiles { interactions: dir.join("interactions.tsv"), planted: dir.join("planted.json") };
    std::fs::write(&files.interactions, to_tsv(&data)).map_err(io(&files.interactions))?;
    let planted = serde_json::to_string_pretty(&planted_partition(cfg)).expect("planted partition serializes");
    std::fs::write(&files.planted, planted).map_err(io(&files.planted))?;
    Ok(files)
}
