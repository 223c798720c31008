//! `nmor`: generate snapshot data, train recurrent autoencoders, predict,
//! build POD baselines and evaluate, with a manifest in every run directory.

mod commands;
mod config;
mod exit;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "nmor", version, about = "Nonlinear model order reduction with recurrent autoencoders")]
struct Cli {
    /// Worker threads for parallel stages. Results are bitwise reproducible
    /// with 1; dataset generation is also thread-count independent.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a family of parameterized problems and write a scaled dataset.
    Generate(GenerateArgs),
    /// Train a recurrent autoencoder on a dataset.
    Train(TrainArgs),
    /// Roll a trained model forward from an initial condition.
    Predict(PredictArgs),
    /// POD basis (and optionally a POD-LSTM) of a dataset.
    Pod(PodArgs),
    /// Compare a predicted trajectory with the truth.
    Eval(EvalArgs),
    /// Finite-difference check of every backward pass.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SolverKind {
    Burgers,
    Vortex,
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    pub solver: SolverKind,
    /// JSON with any of `ns`, `seed`, `scaling` and a `solver` object.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Start from the full-size problem instead of the desk-scale one.
    #[arg(long)]
    pub full_size: bool,
    #[arg(long)]
    pub ns: Option<usize>,
    /// Falls back to the config file, then NMOR_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON training configuration; every field is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint; only `ntrain` and `checkpoint_every` may change.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub ntrain: Option<usize>,
    #[arg(long)]
    pub nh: Option<usize>,
    #[arg(long)]
    pub nb: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Container with an unscaled `x0` record.
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    pub initial: Option<PathBuf>,
    /// Take the initial condition from this dataset instead.
    #[arg(long, requires = "sample")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long)]
    pub steps: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Decode only the last state.
    #[arg(long)]
    pub final_only: bool,
}

#[derive(Args)]
pub struct PodArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of modes; otherwise chosen by the energy fraction.
    #[arg(long, conflicts_with = "kappa")]
    pub nh: Option<usize>,
    #[arg(long, default_value_t = nmor::pod::DEFAULT_KAPPA)]
    pub kappa: f64,
    /// Also fit an LSTM to the POD coefficients for this many steps.
    #[arg(long, default_value_t = 0)]
    pub lstm_ntrain: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Error,
    Tke,
    Psd,
    Centers,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Container with a `fields`, `trajectories` or `samples` record.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub prediction: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Trajectory to use when a file holds several.
    #[arg(long, default_value_t = 0)]
    pub truth_sample: usize,
    #[arg(long, default_value_t = 0)]
    pub prediction_sample: usize,
    /// Skip this many leading truth snapshots (predictions start one step
    /// after their initial condition).
    #[arg(long, default_value_t = 0)]
    pub truth_offset: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "error")]
    pub metrics: Vec<Metric>,
    /// Time between snapshots, for PSD frequencies.
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
    /// Vortex signs for centre tracking, e.g. `1,-1,-1`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub signs: Vec<f64>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the table and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(exit::Status::Validation as u8);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(exit::Status::Validation as u8);
    }
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a, cli.threads),
        Command::Train(a) => commands::train(&a, cli.threads),
        Command::Predict(a) => commands::predict(&a, cli.threads),
        Command::Pod(a) => commands::pod(&a, cli.threads),
        Command::Eval(a) => commands::eval(&a, cli.threads),
        Command::Gradcheck(a) => commands::gradcheck(&a, cli.threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::classify(&e) as u8)
        }
    }
}
