//! Cluster-aware item prompt learning for session-based recommendation.
//!
//! The pipeline mines item clusters from a weighted co-occurrence graph built
//! over training sessions, then trains a session encoder whose input item
//! embeddings are fused with learnable per-cluster prompt vectors through a
//! normalized self-gate.
//!
//! Stages, in pipeline order:
//!
//! - [`dataset`]: ingestion, sessionization, filtering, chronological splits,
//!   sequence splitting into `(prefix, next item)` instances.
//! - [`graph`]: session graphs and the weighted global graph, plus the
//!   test-time overlay for unseen items.
//! - [`community`]: Leiden partitioning under modularity with resolution.
//! - [`prompt`]: prompt tables and the gated fusion.
//! - [`model`]: GRU / attention encoders, full-catalog scoring, loss and
//!   hand-derived gradients.
//! - [`training`]: Adam, early stopping, checkpoints.
//! - [`eval`]: full-catalog ranks and MRR@k / Recall@k.
//! - [`pipeline`]: the end-to-end drivers used by the CLI.

pub mod community;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod prompt;
pub mod synth;
pub mod tensor;
pub mod training;

pub use community::{leiden, modularity, Partition};
pub use config::{RunConfig, TrainConfig};
pub use dataset::{Instance, Session, SessionDataset};
pub use eval::EvalReport;
pub use graph::GlobalGraph;
pub use model::{EncoderKind, ModelParams};
pub use prompt::PromptVariant;
pub use training::Checkpoint;
