use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use clipsbr::config::RunConfig;
use clipsbr::dataset::Split;
use clipsbr::model::EncoderKind;
use clipsbr::pipeline::{self, PipelineError, CHECKPOINT_FILE};
use clipsbr::prompt::PromptVariant;
use clipsbr::synth::{self, SynthConfig};

#[derive(Parser)]
#[command(name = "clipsbr", version, about = "Cluster-aware prompt learning for session-based recommendation")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override fields of the JSON config.
#[derive(Args)]
struct Overrides {
    /// JSON run configuration; flags below take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    resolution: Option<f64>,
    #[arg(long, global = true)]
    prompt_variant: Option<PromptVariant>,
    #[arg(long, global = true)]
    encoder: Option<EncoderKind>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    patience: Option<usize>,
    /// Embedding dimension.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Ranking cutoff; repeat for several.
    #[arg(long = "k", global = true)]
    ks: Vec<usize>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    artifacts_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sessionize, filter and split a raw interaction TSV.
    Preprocess {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        gap_seconds: Option<i64>,
    },
    /// Build the training graph and partition it.
    Mine,
    /// Fit a model on the mined artifacts.
    Train,
    /// Score a checkpoint on one split.
    Eval {
        /// Defaults to the checkpoint in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Compare all prompt variants against the unprompted model.
    Ablate {
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Re-mine and re-train over a grid of resolutions.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        resolutions: Vec<f64>,
    },
    /// Generate planted-cluster sessions.
    Synth {
        #[arg(long, default_value_t = 500)]
        num_items: usize,
        #[arg(long, default_value_t = 10)]
        num_clusters: usize,
        #[arg(long, default_value_t = 200)]
        num_users: usize,
        #[arg(long, default_value_t = 10)]
        sessions_per_user: usize,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
        /// Output directory for interactions.tsv and planted.json.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(o: &Overrides) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let t = &mut cfg.train;
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(o.resolution, t.resolution);
    set!(o.prompt_variant, t.prompt_variant);
    set!(o.encoder, t.encoder);
    set!(o.seed, t.seed);
    set!(o.batch_size, t.batch_size);
    set!(o.lr, t.learning_rate);
    set!(o.epochs, t.max_epochs);
    set!(o.patience, t.patience);
    set!(o.dim, t.d);
    set!(o.data_dir, cfg.data_dir);
    set!(o.artifacts_dir, cfg.artifacts_dir);
    set!(o.out_dir, cfg.out_dir);
    if !o.ks.is_empty() {
        cfg.ks = o.ks.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = load_config(&cli.overrides)?;
    match cli.command {
        Command::Preprocess { input, gap_seconds } => {
            if input.is_some() {
                cfg.input = input;
            }
            if let Some(g) = gap_seconds {
                cfg.gap_seconds = g;
            }
            let m = pipeline::preprocess(&cfg)?;
            println!(
                "items {} (seen in train {}), users {}, sessions train/valid/test {}/{}/{}, avg length {:.2}",
                m.num_items,
                m.num_seen_items,
                m.num_users,
                m.counts.train,
                m.counts.valid,
                m.counts.test,
                m.avg_session_length
            );
            println!("wrote {}", cfg.data_dir.display());
        }
        Command::Mine => {
            let p = pipeline::mine(&cfg)?;
            println!("clusters {}  quality {:.6}  resolution {}", p.num_clusters, p.quality, p.resolution);
        }
        Command::Train => {
            let out = pipeline::train(&cfg)?;
            println!(
                "best epoch {} of {}, valid MRR@5 {:.4}{}",
                out.best.epoch,
                out.log.len(),
                out.best.best_mrr5,
                if out.stopped_early { " (early stop)" } else { "" }
            );
            println!("wrote {}", cfg.out_dir.join(CHECKPOINT_FILE).display());
        }
        Command::Eval { checkpoint, split } => {
            let path = checkpoint.unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT_FILE));
            let report = pipeline::eval(&cfg, &path, split)?;
            print!("{}", report.table());
        }
        Command::Ablate { seeds } => {
            let seeds = if seeds.is_empty() { vec![cfg.train.seed] } else { seeds };
            let report = pipeline::ablate(&cfg, &seeds)?;
            print!("{}", report.table());
        }
        Command::Sweep { resolutions } => {
            if !resolutions.is_empty() {
                cfg.resolutions = resolutions;
            }
            let report = pipeline::sweep(&cfg)?;
            print!("{}", report.table());
            println!("best resolution {}", report.best_resolution);
        }
        Command::Synth { num_items, num_clusters, num_users, sessions_per_user, noise, out } => {
            let sc = SynthConfig {
                num_items,
                num_clusters,
                num_users,
                sessions_per_user,
                noise,
                seed: cfg.train.seed,
                ..Default::default()
            };
            let files = synth::write(&sc, &out)?;
            println!("wrote {} and {}", files.interactions.display(), files.planted.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
