use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use qontot::ansatz::AnsatzKind;
use qontot::datagen::Task;
use qontot::neucot::Size;
use qontot::train::{AverageMode, Loss, Optimizer};

#[derive(Parser)]
#[command(name = "qontot", version, about = "Contextual transport-plan prediction with circuit models")]
#[command(after_help = "Set QONTOT_THREADS to cap the number of worker threads.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenArgs),
    /// Fit a circuit model or a neural baseline.
    Train(TrainArgs),
    /// Score a predictor on a dataset.
    Eval(EvalArgs),
    /// Predict a transport plan for one context and source marginal.
    Predict(PredictArgs),
}

/// Accepts the library's snake_case names, with dashes allowed.
fn parse_name<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    LinearD8,
    NonlinearD8,
    FourgroupsD8,
    DsmAssign,
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// JSON generator settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// transport or dsm.
    #[arg(long, value_parser = parse_name::<Task>)]
    pub task: Option<Task>,
    /// Number of DSM samples.
    #[arg(long)]
    pub count: Option<usize>,
    /// Matrix size: clusters for transport data, entities for DSM data.
    #[arg(long)]
    pub d: Option<usize>,
    /// Teacher ansatz for DSM data.
    #[arg(long, value_parser = parse_name::<AnsatzKind>)]
    pub ansatz: Option<AnsatzKind>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Qontot,
    Neucot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    #[default]
    Exact,
    Shots,
}

/// Held-out split shared by `train` and `eval`.
#[derive(Args, Clone, Copy)]
pub struct SplitArgs {
    /// Hold out this fraction of the distinct contexts as a test set.
    #[arg(long)]
    pub test_frac: Option<f64>,
    /// Seed of the split; defaults to --seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// transport, marginal or dsm; defaults to the dataset task.
    #[arg(long, value_parser = parse_name::<Loss>)]
    pub loss: Option<Loss>,
    /// simple or checkerboard.
    #[arg(long, value_parser = parse_name::<AnsatzKind>)]
    pub ansatz: Option<AnsatzKind>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Auxiliary Bell pairs; defaults to one more than the data qubits.
    #[arg(long)]
    pub aux: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeKind>,
    /// Shots per prediction in shots mode.
    #[arg(long)]
    pub shots: Option<u64>,
    /// nelder_mead, spsa or bfgs_numeric.
    #[arg(long, value_parser = parse_name::<Optimizer>)]
    pub optimizer: Option<Optimizer>,
    #[arg(long)]
    pub max_evals: Option<usize>,
    /// Start from angles drawn uniformly in [-s, s]; 0 starts from zeros.
    #[arg(long)]
    pub init_spread: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Neural baseline width: xs, s, m or l.
    #[arg(long, value_parser = parse_name::<Size>)]
    pub size: Option<Size>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Feed the context into the last layer as well.
    #[arg(long)]
    pub residual: bool,
    #[arg(long)]
    pub dsm_penalty: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Qontot,
    Identity,
    Average,
    Neucot,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub predictor: PredictorKind,
    /// Model file for the qontot and neucot predictors.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// mean_marginals or mean_of_plans.
    #[arg(long, value_parser = parse_name::<AverageMode>, default_value = "mean_marginals")]
    pub average_mode: AverageMode,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated context vector.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub context: Vec<f64>,
    /// Comma-separated source marginal.
    #[arg(long, value_delimiter = ',', conflicts_with = "mu_file", required_unless_present = "mu_file")]
    pub mu: Option<Vec<f64>>,
    /// Source marginal as a CSV row or column.
    #[arg(long)]
    pub mu_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
