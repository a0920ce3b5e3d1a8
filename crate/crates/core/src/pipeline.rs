//! End-to-end drivers: preprocess → mine → train → eval, plus the ablation
//! and resolution-sweep experiments. The CLI is a thin layer over these.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::community::{leiden, modularity, CommunityError, Partition, PartitionFile};
use crate::config::{hash_hex, json_hash, ConfigError, RunConfig, TrainConfig};
use crate::dataset::{
    filter_dataset, load_interactions, read_splits, sessionize, sessions_from_ids, split_dataset, write_splits,
    DatasetError, InputFormat, SessionDataset, Split, SplitManifest,
};
use crate::eval::{evaluate, EvalError, EvalInputs, EvalReport};
use crate::graph::{build_global_graph, GlobalGraph, GraphError};
use crate::prompt::{PromptVariant, SessionPromptIndex};
use crate::synth::SynthError;
use crate::training::{fit, Checkpoint, CheckpointError, FitOutcome, Provenance, TrainError};

pub const GRAPH_FILE: &str = "graph.edges";
pub const PARTITION_FILE: &str = "partition.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Community(#[from] CommunityError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("no input file given (set `input` in the config or pass --input)")]
    MissingInput,
    #[error("stale artifacts: {0}")]
    Stale(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    /// 2 for problems with the user's input or artifacts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use PipelineError::*;
        match self {
            Dataset(_) | Config(_) | Graph(_) | Synth(_) | MissingInput | Stale(_) | Io { .. } => 2,
            Community(e) => match e {
                CommunityError::InvalidResolution(_) | CommunityError::EmptyGraph | CommunityError::File { .. } => 2,
                _ => 1,
            },
            Checkpoint(e) => match e {
                CheckpointError::Io { .. } | CheckpointError::BadMagic | CheckpointError::Truncated => 2,
                _ => 1,
            },
            Train(e) => match e {
                TrainError::EmptyTrain | TrainError::EmptyValid | TrainError::Config(_) => 2,
                _ => 1,
            },
            Eval(e) => match e {
                EvalError::Empty | EvalError::ZeroCutoff => 2,
                _ => 1,
            },
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let json = serde_json::to_string_pretty(value).expect("reports serialize");
    fs::write(path, json + "\n").map_err(io_err(path))
}

/// Sessionized, filtered and split data with the raw ids of its items and
/// users.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: SessionDataset,
    pub item_ids: Vec<String>,
    pub user_ids: Vec<String>,
}

pub fn prepare(input: &Path, cfg: &RunConfig) -> Result<Prepared> {
    let log = load_interactions(input, InputFormat::Tsv)?;
    let sessions = if log.is_presessionized() { sessions_from_ids(&log) } else { sessionize(&log, cfg.gap_seconds)? };
    let filtered = filter_dataset(&sessions, cfg.min_session_len, cfg.min_user_sessions)?;
    let dataset = split_dataset(&filtered.sessions, cfg.valid_fraction, cfg.test_fraction)?;
    let item_ids = dataset.item_order.iter().map(|&f| log.items.id(filtered.item_map[f]).to_string()).collect();
    let user_ids = filtered.user_map.iter().map(|&u| log.users.id(u).to_string()).collect();
    Ok(Prepared { dataset, item_ids, user_ids })
}

/// Reads the raw input and writes split files plus manifest to `data_dir`.
pub fn preprocess(cfg: &RunConfig) -> Result<SplitManifest> {
    let input = cfg.input.as_deref().ok_or(PipelineError::MissingInput)?;
    let prepared = prepare(input, cfg)?;
    Ok(write_splits(&cfg.data_dir, &prepared.dataset, &prepared.item_ids, &prepared.user_ids)?)
}

/// Training graph and its partition.
#[derive(Debug, Clone)]
pub struct Mined {
    pub graph: GlobalGraph,
    pub partition: Partition,
    pub quality: f64,
}

/// Builds the global graph from training sessions only and partitions it.
pub fn mine_dataset(dataset: &SessionDataset, resolution: f64, seed: u64) -> Result<Mined> {
    if dataset.train.is_empty() {
        return Err(TrainError::EmptyTrain.into());
    }
    let graph = build_global_graph(&dataset.train, dataset.num_seen_items);
    let partition = leiden(&graph, resolution, seed)?;
    let quality = modularity(&graph, &partition, resolution);
    Ok(Mined { graph, partition, quality })
}

/// Mines the split in `data_dir` and writes the graph and partition to
/// `artifacts_dir`.
pub fn mine(cfg: &RunConfig) -> Result<PartitionFile> {
    cfg.validate()?;
    let (dataset, manifest) = read_splits(&cfg.data_dir)?;
    let mined = mine_dataset(&dataset, cfg.train.resolution, cfg.train.seed)?;
    let dir = &cfg.artifacts_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let graph_path = dir.join(GRAPH_FILE);
    fs::write(&graph_path, mined.graph.to_edge_list()).map_err(io_err(&graph_path))?;
    let mut file = PartitionFile::new(&mined.partition, cfg.train.resolution, cfg.train.seed, mined.quality);
    file.source_hash = Some(manifest.content_hash);
    file.save(&dir.join(PARTITION_FILE))?;
    Ok(file)
}

/// Everything `train` and `eval` load from disk, checked for consistency.
pub struct Artifacts {
    pub dataset: SessionDataset,
    pub manifest: SplitManifest,
    pub mined: Mined,
    pub partition_hash: String,
}

pub fn load_artifacts(cfg: &RunConfig) -> Result<Artifacts> {
    let (dataset, manifest) = read_splits(&cfg.data_dir)?;
    let part_path = cfg.artifacts_dir.join(PARTITION_FILE);
    let file = PartitionFile::load(&part_path)?;
    if file.source_hash.as_deref() != Some(manifest.content_hash.as_str()) {
        return Err(PipelineError::Stale(format!(
            "{} was mined from different split files; rerun `mine`",
            part_path.display()
        )));
    }
    let graph_path = cfg.artifacts_dir.join(GRAPH_FILE);
    let graph = GlobalGraph::from_edge_list(&fs::read_to_string(&graph_path).map_err(io_err(&graph_path))?)?;
    let partition = file.partition();
    if graph.num_nodes() != dataset.num_seen_items || partition.len() != graph.num_nodes() {
        return Err(PipelineError::Stale("graph, partition and splits disagree on the item count".into()));
    }
    let partition_bytes = fs::read(&part_path).map_err(io_err(&part_path))?;
    let mined = Mined { graph, partition, quality: file.quality };
    Ok(Artifacts { dataset, manifest, mined, partition_hash: hash_hex(&partition_bytes)[..16].to_string() })
}

fn fit_logged(
    dataset: &SessionDataset,
    mined: &Mined,
    train: &TrainConfig,
    provenance: &Provenance,
    log_path: Option<&Path>,
) -> Result<FitOutcome> {
    match log_path {
        Some(path) => {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            let mut sink = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
            Ok(fit(dataset, train, &mined.partition, &mined.graph, provenance, Some(&mut sink))?)
        }
        None => Ok(fit(dataset, train, &mined.partition, &mined.graph, provenance, None)?),
    }
}

/// Trains on stored artifacts; writes the best checkpoint and the epoch log
/// to `out_dir`.
pub fn train(cfg: &RunConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let art = load_artifacts(cfg)?;
    let prov = Provenance {
        data_hash: Some(art.manifest.content_hash.clone()),
        partition_hash: Some(art.partition_hash.clone()),
    };
    let outcome = fit_logged(&art.dataset, &art.mined, &cfg.train, &prov, Some(&cfg.out_dir.join(TRAIN_LOG_FILE)))?;
    outcome.best.save(&cfg.out_dir.join(CHECKPOINT_FILE))?;
    Ok(outcome)
}

/// Evaluates the model of a fitted checkpoint on one split.
pub fn evaluate_split(
    checkpoint: &Checkpoint,
    dataset: &SessionDataset,
    mined: &Mined,
    split: Split,
    ks: &[usize],
) -> Result<EvalReport> {
    let index = SessionPromptIndex::from_train(&dataset.train);
    let inputs = EvalInputs {
        graph: &mined.graph,
        partition: &mined.partition,
        session_index: &index,
        num_seen_items: dataset.num_seen_items,
    };
    Ok(evaluate(&checkpoint.params, inputs, dataset.split(split), split, ks, &checkpoint.config_hash)?)
}

/// Loads a checkpoint, refuses it if the data or partition changed since
/// training, and writes `eval_<split>.json` to `out_dir`.
pub fn eval(cfg: &RunConfig, checkpoint_path: &Path, split: Split) -> Result<EvalReport> {
    cfg.validate()?;
    let art = load_artifacts(cfg)?;
    let cp = Checkpoint::load(checkpoint_path)?;
    if cp.data_hash.as_deref() != Some(art.manifest.content_hash.as_str()) {
        return Err(PipelineError::Stale("checkpoint was trained on different split files".into()));
    }
    if cp.partition_hash.as_deref() != Some(art.partition_hash.as_str()) {
        return Err(PipelineError::Stale("checkpoint was trained against a different partition".into()));
    }
    let report = evaluate_split(&cp, &art.dataset, &art.mined, split, &cfg.ks)?;
    write_json(&cfg.out_dir.join(format!("eval_{split}.json")), &report)?;
    Ok(report)
}

/// Test metrics of one fitted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: PromptVariant,
    pub seed: u64,
    pub resolution: f64,
    pub best_epoch: usize,
    pub valid_mrr5: f64,
    pub test_mrr5: f64,
    pub test_recall5: f64,
}

/// Fits one configuration and scores its best checkpoint on the test split.
pub fn run_once(
    dataset: &SessionDataset,
    mined: &Mined,
    train: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<(RunResult, FitOutcome)> {
    let outcome = fit_logged(dataset, mined, train, &Provenance::default(), log_path)?;
    let test = evaluate_split(&outcome.best, dataset, mined, Split::Test, &[5])?;
    let result = RunResult {
        variant: train.prompt_variant,
        seed: train.seed,
        resolution: train.resolution,
        best_epoch: outcome.best.epoch,
        valid_mrr5: outcome.best.best_mrr5,
        test_mrr5: test.mrr(5).unwrap_or(0.0),
        test_recall5: test.recall(5).unwrap_or(0.0),
    };
    Ok((result, outcome))
}

/// Relative change in percent; 0 when the reference is 0.
pub fn improvement_pct(value: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        0.0
    } else {
        100.0 * (value - reference) / reference
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: PromptVariant,
    pub mrr5: f64,
    pub recall5: f64,
    pub mrr5_improvement: f64,
    pub recall5_improvement: f64,
    /// Mean of the two improvements, in percent.
    pub avg_improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub encoder: crate::model::EncoderKind,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub runs: Vec<RunResult>,
    pub config_hash: String,
}

impl AblationReport {
    pub fn row(&self, variant: PromptVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Builds the improvement table from per-seed runs; metrics are averaged
    /// over seeds before comparing against `none`.
    pub fn from_runs(
        encoder: crate::model::EncoderKind,
        seeds: &[u64],
        runs: Vec<RunResult>,
        config_hash: String,
    ) -> Self {
        let mut variants: Vec<PromptVariant> = Vec::new();
        for r in &runs {
            if !variants.contains(&r.variant) {
                variants.push(r.variant);
            }
        }
        let mean = |v: PromptVariant, f: fn(&RunResult) -> f64| {
            let xs: Vec<f64> = runs.iter().filter(|r| r.variant == v).map(f).collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        let base_mrr = mean(PromptVariant::NONE, |r| r.test_mrr5);
        let base_recall = mean(PromptVariant::NONE, |r| r.test_recall5);
        let rows = variants
            .into_iter()
            .map(|variant| {
                let mrr5 = mean(variant, |r| r.test_mrr5);
                let recall5 = mean(variant, |r| r.test_recall5);
                let mi = improvement_pct(mrr5, base_mrr);
                let ri = improvement_pct(recall5, base_recall);
                AblationRow {
                    variant,
                    mrr5,
                    recall5,
                    mrr5_improvement: mi,
                    recall5_improvement: ri,
                    avg_improvement: (mi + ri) / 2.0,
                }
            })
            .collect();
        Self { encoder, seeds: seeds.to_vec(), rows, runs, config_hash }
    }

    pub fn table(&self) -> String {
        let mut out =
            format!("{:<8}{:>10}{:>10}{:>12}{:>12}{:>12}\n", "variant", "MRR@5", "R@5", "ΔMRR%", "ΔR%", "avg%");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<8}{:>10.4}{:>10.4}{:>12.2}{:>12.2}{:>12.2}\n",
                r.variant.to_string(),
                r.mrr5,
                r.recall5,
                r.mrr5_improvement,
                r.recall5_improvement,
                r.avg_improvement
            ));
        }
        out
    }
}

/// Fits `variants` (with `none` added first if missing) for every seed on
/// a shared split and partition.
pub fn ablate_dataset(
    dataset: &SessionDataset,
    mined: &Mined,
    base: &TrainConfig,
    variants: &[PromptVariant],
    seeds: &[u64],
    log_dir: Option<&Path>,
) -> Result<AblationReport> {
    let mut all = vec![PromptVariant::NONE];
    all.extend(variants.iter().copied().filter(|v| !v.is_none()));
    let mut runs = Vec::new();
    for &variant in &all {
        for &seed in seeds {
            let cfg = TrainConfig { prompt_variant: variant, seed, ..base.clone() };
            cfg.validate()?;
            let log = log_dir.map(|d| d.join(format!("{}_{variant}_s{seed}.jsonl", cfg.encoder)));
            runs.push(run_once(dataset, mined, &cfg, log.as_deref())?.0);
        }
    }
    Ok(AblationReport::from_runs(base.encoder, seeds, runs, json_hash(&(base, seeds))))
}

/// All eight variants on the stored artifacts; writes `ablation.json`.
pub fn ablate(cfg: &RunConfig, seeds: &[u64]) -> Result<AblationReport> {
    cfg.validate()?;
    let art = load_artifacts(cfg)?;
    let dir = cfg.out_dir.join("ablation");
    let report = ablate_dataset(&art.dataset, &art.mined, &cfg.train, &PromptVariant::ALL, seeds, Some(&dir))?;
    write_json(&cfg.out_dir.join("ablation.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub resolution: f64,
    pub num_clusters: usize,
    pub quality: f64,
    pub valid_mrr5: f64,
    pub test_mrr5: f64,
    pub test_recall5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Resolution with the highest test MRR@5.
    pub best_resolution: f64,
    pub config_hash: String,
}

/// Re-mines and re-trains once per resolution.
pub fn sweep_dataset(
    dataset: &SessionDataset,
    base: &TrainConfig,
    resolutions: &[f64],
    log_dir: Option<&Path>,
) -> Result<SweepReport> {
    if resolutions.is_empty() {
        return Err(ConfigError::Resolution(f64::NAN).into());
    }
    resolutions.iter().try_for_each(|&r| crate::config::check_resolution(r))?;
    let mut rows = Vec::new();
    for &resolution in resolutions {
        let cfg = TrainConfig { resolution, ..base.clone() };
        let mined = mine_dataset(dataset, resolution, cfg.seed)?;
        let log = log_dir.map(|d| d.join(format!("r{resolution}.jsonl")));
        let (run, _) = run_once(dataset, &mined, &cfg, log.as_deref())?;
        rows.push(SweepRow {
            resolution,
            num_clusters: mined.partition.num_clusters(),
            quality: mined.quality,
            valid_mrr5: run.valid_mrr5,
            test_mrr5: run.test_mrr5,
            test_recall5: run.test_recall5,
        });
    }
    let best_resolution = rows
        .iter()
        .fold(None::<&SweepRow>, |best, r| match best {
            Some(b) if b.test_mrr5 >= r.test_mrr5 => Some(b),
            _ => Some(r),
        })
        .map_or(f64::NAN, |r| r.resolution);
    Ok(SweepReport { rows, best_resolution, config_hash: json_hash(&(base, resolutions)) })
}

/// Sweep over `cfg.resolutions` on the stored splits; writes `sweep.json`.
pub fn sweep(cfg: &RunConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let (dataset, _) = read_splits(&cfg.data_dir)?;
    let report = sweep_dataset(&dataset, &cfg.train, &cfg.resolutions, Some(&cfg.out_dir.join("sweep")))?;
    write_json(&cfg.out_dir.join("sweep.json"), &report)?;
    Ok(report)
}

impl SweepReport {
    pub fn table(&self) -> String {
        let mut out = format!("{:<12}{:>10}{:>10}{:>10}{:>10}\n", "resolution", "clusters", "Q", "MRR@5", "R@5");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12}{:>10}{:>10.4}{:>10.4}{:>10.4}\n",
                r.resolution, r.num_clusters, r.quality, r.test_mrr5, r.test_recall5
            ));
        }
        out
    }
}
