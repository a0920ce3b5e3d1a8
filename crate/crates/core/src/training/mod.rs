//! Mini-batch Adam training with early stopping on validation MRR@5.

mod adam;
mod checkpoint;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{Checkpoint, CheckpointError, MAGIC};

use crate::community::Partition;
use crate::config::{ConfigError, TrainConfig};
use crate::dataset::{sequence_split, Instance, SessionDataset, Split};
use crate::eval::{evaluate, EvalError, EvalInputs};
use crate::graph::GlobalGraph;
use crate::model::{ModelError, ModelParams, ModelShape};
use crate::prompt::{ClusterMap, SessionPromptIndex};
use crate::tensor::{snap_to_f32, stream_rng};

const STREAM_SHUFFLE: u64 = 7;

/// Validation MRR gains below this do not count as improvement.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training split has no instances")]
    EmptyTrain,
    #[error("validation split has no instances")]
    EmptyValid,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("partition covers {partition} items but the training graph has {graph}")]
    PartitionMismatch { partition: usize, graph: usize },
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("training diverged in epoch {epoch}: {cause}")]
    Diverged { epoch: usize, cause: ModelError, last_good: Box<Checkpoint> },
    #[error("cannot write training log: {0}")]
    Log(#[from] std::io::Error),
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_mrr5: f64,
    pub valid_recall5: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    NoImprovement,
    Stop,
}

/// Patience-based stopping rule.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, best_epoch: 0, stale: 0 }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> Verdict {
        match self.best {
            Some(b) if metric <= b + IMPROVEMENT_TOLERANCE => {
                self.stale += 1;
                if self.stale >= self.patience {
                    Verdict::Stop
                } else {
                    Verdict::NoImprovement
                }
            }
            _ => {
                self.best = Some(metric);
                self.best_epoch = epoch;
                self.stale = 0;
                Verdict::Improved
            }
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Checkpoint with the highest validation MRR@5.
    pub best: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Provenance strings copied into every checkpoint.
#[derive(Debug, Clone, Default)]
pub struct Provenance {
    pub data_hash: Option<String>,
    pub partition_hash: Option<String>,
}

pub fn model_shape(dataset: &SessionDataset, partition: &Partition, config: &TrainConfig) -> ModelShape {
    ModelShape {
        num_items: dataset.num_items,
        d: config.d,
        encoder: config.encoder,
        variant: config.prompt_variant,
        num_clusters: partition.num_clusters().max(1),
        num_users: dataset.num_users,
        num_session_rows: SessionPromptIndex::from_train(&dataset.train).len(),
    }
}

fn snapshot(
    params: &ModelParams,
    adam: &AdamState,
    epoch: usize,
    best: f64,
    config: &TrainConfig,
    prov: &Provenance,
) -> Checkpoint {
    Checkpoint {
        params: params.clone(),
        adam: adam.clone(),
        epoch,
        best_mrr5: best,
        config: config.clone(),
        config_hash: config.hash(),
        data_hash: prov.data_hash.clone(),
        partition_hash: prov.partition_hash.clone(),
    }
}

fn snap_all(params: &mut ModelParams, adam: &mut AdamState) {
    for p in [params, &mut adam.m, &mut adam.v] {
        p.tensors_mut().into_iter().for_each(snap_to_f32);
    }
}

/// Trains on `dataset.train` against a partition mined beforehand from the
/// training graph; clustering is never recomputed here.
///
/// Parameters are rounded to f32 at every epoch boundary so checkpoints
/// (stored as f32) reload to exactly the state that was evaluated.
pub fn fit(
    dataset: &SessionDataset,
    config: &TrainConfig,
    partition: &Partition,
    graph: &GlobalGraph,
    provenance: &Provenance,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<FitOutcome, TrainError> {
    config.validate()?;
    if partition.len() != graph.num_nodes() {
        return Err(TrainError::PartitionMismatch { partition: partition.len(), graph: graph.num_nodes() });
    }
    let train: Vec<Instance> = dataset.train.iter().flat_map(sequence_split).collect();
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    if dataset.valid.iter().all(|s| s.items.len() < 2) {
        return Err(TrainError::EmptyValid);
    }
    let session_index = SessionPromptIndex::from_train(&dataset.train);
    let clusters = ClusterMap::from_partition(partition, dataset.num_items);
    let eval_inputs =
        EvalInputs { graph, partition, session_index: &session_index, num_seen_items: dataset.num_seen_items };

    let mut params =
        ModelParams::init(model_shape(dataset, partition, config), config.seed).map_err(TrainError::Model)?;
    let mut adam = AdamState::new(&params);
    snap_all(&mut params, &mut adam);
    let mut best = snapshot(&params, &adam, 0, 0.0, config, provenance);
    let mut stopper = EarlyStopper::new(config.patience);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = stream_rng(config.seed, STREAM_SHUFFLE);
    let mut log = Vec::new();
    let start = Instant::now();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &train[i]).collect();
            let step = params.loss_and_grad(&batch, &clusters, &session_index);
            let (loss, grads) = match step {
                Ok(r) => r,
                Err(cause @ (ModelError::NonFiniteGradient { .. } | ModelError::NonFiniteLoss)) => {
                    return Err(TrainError::Diverged { epoch, cause, last_good: Box::new(best) })
                }
                Err(e) => return Err(TrainError::Model(e)),
            };
            loss_sum += loss * batch.len() as f64;
            adam_step(&mut params, &grads, &mut adam, config.learning_rate);
        }
        snap_all(&mut params, &mut adam);
        if !params.all_finite() {
            let cause = params.check_finite().unwrap_err();
            return Err(TrainError::Diverged { epoch, cause, last_good: Box::new(best) });
        }
        let report = evaluate(&params, eval_inputs, &dataset.valid, Split::Valid, &[5], &config.hash())?;
        let mrr5 = report.mrr(5).unwrap_or(0.0);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            valid_mrr5: mrr5,
            valid_recall5: report.recall(5).unwrap_or(0.0),
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        if let Some(sink) = log_sink.as_deref_mut() {
            serde_json::to_writer(&mut *sink, &record).map_err(std::io::Error::from)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        log.push(record);
        match stopper.observe(epoch, mrr5) {
            Verdict::Improved => best = snapshot(&params, &adam, epoch, mrr5, config, provenance),
            Verdict::NoImprovement => {}
            Verdict::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(FitOutcome { best, log, stopped_early })
}
