//! Prompt-variant ablation on planted-cluster data, one seed.
//!
//! ```text
//! cargo run --release -p clipsbr --example synthetic_ablation -- [gru|attn]
//! ```

use clipsbr::config::{RunConfig, TrainConfig};
use clipsbr::model::EncoderKind;
use clipsbr::pipeline;
use clipsbr::prompt::PromptVariant;
use clipsbr::synth::{self, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let encoder: EncoderKind = std::env::args().nth(1).as_deref().unwrap_or("gru").parse()?;
    let dir = tempfile::tempdir()?;
    let files = synth::write(&SynthConfig::default(), dir.path())?;
    let data = pipeline::prepare(&files.interactions, &RunConfig::default())?.dataset;
    let mined = pipeline::mine_dataset(&data, 1.0, 0)?;
    println!("{} clusters, quality {:.3}", mined.partition.num_clusters(), mined.quality);

    let base = TrainConfig { encoder, d: 32, learning_rate: 0.01, max_epochs: 20, patience: 5, ..Default::default() };
    let variants = [PromptVariant::C, PromptVariant::U, PromptVariant::S, PromptVariant::CUS];
    let report = pipeline::ablate_dataset(&data, &mined, &base, &variants, &[0], None)?;
    print!("{}", report.table());
    Ok(())
}
