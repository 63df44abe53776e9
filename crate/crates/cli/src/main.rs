//! `handfusion`: dataset construction and QA, three-stage training,
//! inference, evaluation, and the ablation sweeps.

mod commands;
mod lock;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use handfusion_core::error::{ConfigError, DatasetError};
use handfusion_core::training::{PipelineConfig, RunEvalSetup};

#[derive(Parser)]
#[command(
    name = "handfusion",
    version,
    about = "Gesture-conditioned text-to-image fine-tuning at desk scale"
)]
struct Cli {
    /// JSON run-config file (sections: train, eval, ablate, run_dir, seed).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base directory for run outputs (default ./runs).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Seed override applied to the train section.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Validate the configuration and print the resolved plan; no side
    /// effects.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset construction, QA, and the synthetic toy generator.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Run the three-stage training pipeline from the config's train section.
    Train,
    /// Sample images from a completed run.
    Infer(InferArgs),
    /// Score a generated image directory against a real one.
    Eval(EvalArgs),
    /// Parameter sweeps over the pipeline.
    Ablate {
        #[command(subcommand)]
        command: AblateCommand,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Caption and enrich a directory of per-gesture images.
    Build(DatasetBuildArgs),
    /// Generate the synthetic glyph dataset.
    Toy(DatasetToyArgs),
    /// Compute the dataset quality metrics.
    Qa(DatasetQaArgs),
}

#[derive(Args)]
struct DatasetBuildArgs {
    /// Source directory with `<gesture>/*.png`.
    #[arg(long)]
    images: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated gesture ids.
    #[arg(long, value_delimiter = ',')]
    gestures: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    n_train: usize,
    #[arg(long, default_value_t = 1000)]
    n_test: usize,
    /// "template" or "remote".
    #[arg(long, default_value = "template")]
    captioner: String,
    /// "template" or "remote".
    #[arg(long, default_value = "template")]
    enricher: String,
    #[arg(long, default_value_t = 0)]
    dataset_seed: u64,
}

#[derive(Args)]
struct DatasetToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_per_gesture: usize,
    /// Comma-separated gesture ids from the built-in glyph set.
    #[arg(long, value_delimiter = ',', default_value = "phone_call,four,like,mute,ok,palm")]
    gestures: Vec<String>,
    #[arg(long, default_value_t = 16)]
    image_size: usize,
    #[arg(long, default_value_t = 0)]
    dataset_seed: u64,
}

#[derive(Args)]
struct DatasetQaArgs {
    /// Dataset directory (meta.json + manifest.jsonl).
    #[arg(long)]
    dataset: PathBuf,
    /// "hash", "constant", or "remote".
    #[arg(long, default_value = "hash")]
    embedder: String,
    #[arg(long, default_value_t = 32)]
    d_joint: usize,
    #[arg(long, default_value_t = 100_000)]
    max_pairs: usize,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    /// Run directory (runs/<hash8>) containing bundle/ and checkpoints/.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    prompt: String,
    /// Inference blend coefficient; defaults to the bundle's stored value.
    #[arg(long)]
    mu: Option<f32>,
    #[arg(long, default_value_t = 0)]
    infer_seed: u64,
    /// Number of images (distinct derived seeds).
    #[arg(short = 'n', long, default_value_t = 4)]
    count: usize,
    /// DDIM inference steps; defaults to min(50, schedule steps).
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory; defaults to `<run>/samples/infer`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    gen: PathBuf,
    #[arg(long, default_value_t = 16)]
    patch_size: usize,
    #[arg(long, default_value_t = 50)]
    kid_subset_size: usize,
    #[arg(long, default_value_t = 100)]
    kid_subsets: usize,
    #[arg(long, default_value_t = 4)]
    extractor_grid: usize,
    /// "glyph_oracle" or "remote" (remote needs --detector-d-gesture).
    #[arg(long, default_value = "glyph_oracle")]
    detector: String,
    #[arg(long, default_value_t = 16)]
    detector_d_gesture: usize,
    /// "downsample", "identity", or "remote" (remote needs --extractor-d-feat).
    #[arg(long, default_value = "downsample")]
    extractor: String,
    #[arg(long, default_value_t = 16)]
    extractor_d_feat: usize,
    /// Input size assumed by the identity extractor.
    #[arg(long, default_value_t = 16)]
    identity_size: usize,
    #[arg(long, default_value_t = 0)]
    eval_seed: u64,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AblateCommand {
    /// Sweep the training blend coefficient.
    Lambda {
        /// Comma-separated values; default 0.1..0.9.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f32>>,
    },
    /// Sweep the training-set size.
    Trainsize {
        /// Comma-separated sizes; default 200,500,800,1000,1200.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
}

/// The run-config file: the union of the module configs plus run_dir, seed,
/// and log level. Unknown keys are rejected.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub run_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub log_level: Option<String>,
    pub train: Option<PipelineConfig>,
    pub eval: Option<RunEvalSetup>,
    pub ablate: Option<AblateSection>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub lambda_values: Option<Vec<f32>>,
    pub trainsize_sizes: Option<Vec<usize>>,
}

/// Resolved command environment shared by the command implementations.
pub struct Env {
    pub file: FileConfig,
    pub runs_base: PathBuf,
    pub dry_run: bool,
}

fn load_env(cli: &Cli) -> anyhow::Result<Env> {
    let mut file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            serde_json::from_str::<FileConfig>(&text).map_err(ConfigError::Parse)?
        }
        None => FileConfig::default(),
    };
    if let Some(level) = &file.log_level {
        std::env::set_var("RUST_LOG", level);
    }
    if let (Some(seed), Some(train)) = (cli.seed.or(file.seed), file.train.as_mut()) {
        train.seed = seed;
    }
    let runs_base = cli
        .run_dir
        .clone()
        .or(file.run_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    Ok(Env {
        file,
        runs_base,
        dry_run: cli.dry_run,
    })
}

/// Exit codes: 0 success, 2 config error, 3 adapter failure over budget,
/// 1 anything else.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<handfusion_core::Error>() {
            if matches!(e, handfusion_core::Error::Config(_)) {
                return 2;
            }
        }
        if let Some(e) = cause.downcast_ref::<DatasetError>() {
            return match e {
                DatasetError::FailureBudgetExceeded { .. } | DatasetError::AdapterFailure { .. } => 3,
                DatasetError::InsufficientImages { .. } | DatasetError::UnknownGesture { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    let result = load_env(&cli).and_then(|env| match &cli.command {
        Command::Dataset { command } => match command {
            DatasetCommand::Build(args) => commands::dataset_build(&env, args),
            DatasetCommand::Toy(args) => commands::dataset_toy(&env, args),
            DatasetCommand::Qa(args) => commands::dataset_qa(&env, args),
        },
        Command::Train => commands::train(&env),
        Command::Infer(args) => commands::infer(&env, args),
        Command::Eval(args) => commands::eval(&env, args),
        Command::Ablate { command } => match command {
            AblateCommand::Lambda { values } => commands::ablate_lambda_cmd(&env, values.clone()),
            AblateCommand::Trainsize { sizes } => {
                commands::ablate_trainsize_cmd(&env, sizes.clone())
            }
        },
    });

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
