use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "kgsynth", version, about = "Rule-guided, optionally differentially private tabular synthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a CSV table and write the model artifact.
    Fit(FitArgs),
    /// Draw synthetic rows from a model artifact.
    Sample(SampleArgs),
    /// Compare a synthetic table with the original.
    Eval(EvalArgs),
    /// Run a membership or attribute inference attack.
    Attack(AttackArgs),
    /// Privacy budget of the subsampled Gaussian mechanism.
    Accountant(AccountantArgs),
    /// Write a built-in dataset with its schema and rule files.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Missing {
    DropRow,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// Two hidden layers of 256, 300 epochs, batch 500.
    Default,
    /// Two hidden layers of 128, 40 epochs, batch 100, learning rate 1e-3.
    Desk,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV table with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Schema file (TOML).
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long, value_enum, default_value = "drop-row")]
    pub missing: Missing,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "default")]
    pub profile: Profile,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Weight of the rule-enforcement penalty.
    #[arg(long)]
    pub rule_weight: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub n_critic: Option<usize>,
    /// Hidden widths of both networks, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Keep training rows that violate a rule instead of refusing them.
    #[arg(long)]
    pub keep_violations: bool,
    /// Train the critic with DP-SGD.
    #[arg(long)]
    pub dp: bool,
    /// Noise multiplier; solved from --epsilon-ceiling when omitted.
    #[arg(long, requires = "dp")]
    pub sigma: Option<f64>,
    #[arg(long, requires = "dp", default_value_t = 1.0)]
    pub clip: f64,
    #[arg(long, requires = "dp", default_value_t = 1e-5)]
    pub delta: f64,
    /// Stop before any step that would push ε past this value.
    #[arg(long, requires = "dp")]
    pub epsilon_ceiling: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// Rule file (TOML).
    #[arg(long)]
    pub rules: PathBuf,
    /// Where to write the model artifact.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Optional CSV export of the loss history.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Pmse,
    Chi2,
    Ks,
    Regression,
    Utility,
    Aia,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Original table.
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long)]
    pub synthetic: PathBuf,
    /// Holdout for classifier utility; 30% of the original is split off when
    /// omitted.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "pmse,chi2,ks")]
    pub metrics: Vec<Metric>,
    /// Target column for regression and utility; defaults to the schema's.
    #[arg(long)]
    pub target: Option<String>,
    /// Sensitive column for attribute inference; defaults to the schema's
    /// first.
    #[arg(long)]
    pub sensitive: Option<String>,
    #[arg(long, default_value_t = 6)]
    pub cart_depth: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Mia,
    Aia,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthesizerKind {
    Gan,
    /// Releases its training rows verbatim; a sanity baseline.
    Copy,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Population (membership) or original table (attribute).
    #[command(flatten)]
    pub input: DataArgs,
    /// Synthetic table attacked by attribute inference.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    /// Rule file for the GAN synthesizer.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gan")]
    pub synthesizer: SynthesizerKind,
    /// Members per target or shadow set; the largest size the population
    /// supports when omitted.
    #[arg(long)]
    pub members: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub shadows: usize,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub sensitive: Option<String>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct AccountantArgs {
    /// Sampling rate.
    #[arg(long)]
    pub q: f64,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long)]
    pub steps: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    /// RDP orders, comma separated; the default grid when omitted.
    #[arg(long, value_delimiter = ',')]
    pub orders: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureName {
    MiniNetwork,
    /// Converts raw UCI Adult files given with --data.
    Adult,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long, value_enum)]
    pub name: FixtureName,
    /// Row count; for Adult, a seeded subsample (all rows when omitted).
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    /// Raw input file (Adult only).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// CSV output.
    #[arg(long)]
    pub out: PathBuf,
    /// Schema output (TOML).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Rule file output (TOML).
    #[arg(long)]
    pub rules: Option<PathBuf>,
}
