//! `ldnn` command-line tool: dataset generation, training, evaluation,
//! gradient checks, benchmarks and decision-boundary rasters.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ldnn::LdnnError;
use thiserror::Error;

use crate::config::{InitKind, LossArg, NormalizeArg};

#[derive(Error, Debug)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    /// Divergence or a failed check.
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Failure(_) => 3,
        }
    }
}

impl From<LdnnError> for CliError {
    fn from(e: LdnnError) -> Self {
        match e {
            LdnnError::Parameter(_) => CliError::Usage(e.to_string()),
            LdnnError::Divergence { .. } => CliError::Failure(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ldnn", version, about = "Logistic disjunctive normal networks")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a two-moons dataset as CSV (label first).
    #[command(allow_negative_numbers = true)]
    GenMoons {
        /// Points per moon.
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Moon radius.
        #[arg(long = "R", default_value_t = 1.0)]
        radius: f64,
        /// Moon width.
        #[arg(long = "W", default_value_t = 0.7)]
        width: f64,
        /// Vertical separation.
        #[arg(long, default_value_t = -0.7)]
        sep: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the 194-point two-spirals dataset as CSV.
    GenSpirals {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an LDNN (or the modular baseline) and write the model document.
    Train(TrainArgs),
    /// Jointly train a convolutional stack with LDNN heads on IDX images.
    TrainConv(TrainConvArgs),
    /// Print the error rate of a saved model on a dataset.
    Eval(EvalArgs),
    /// Run every finite-difference gradient suite.
    GradCheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Random configurations per suite.
        #[arg(long, default_value_t = ldnn::gradcheck::DEFAULT_CONFIGS)]
        configs: usize,
    },
    /// Two-moons test error table over network sizes and methods.
    BenchMoons(BenchMoonsArgs),
    /// Two-spirals training error for LDNN and ModN at clustering thresholds.
    BenchSpirals(BenchSpiralsArgs),
    /// Rasterize a 2-input model's output and decision region.
    #[command(allow_negative_numbers = true)]
    Boundary(BoundaryArgs),
}

/// Config handling shared by the training commands.
#[derive(Args, Debug)]
struct ConfigArgs {
    /// JSON experiment config; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the effective config as JSON and exit.
    #[arg(long)]
    dump_config: bool,
}

/// Optimizer flags shared by the training commands.
#[derive(Args, Debug)]
struct OptimArgs {
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Hold out this fraction for validation-based early stopping.
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model document output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch history output path (JSON).
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Training CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Test CSV, reported alongside the training error.
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// CSV label column: `first`, `last` or a 0-based index.
    #[arg(long, value_parser = parse_label_column)]
    label_column: Option<ldnn::data::LabelColumn>,
    #[arg(long, value_enum)]
    normalize: Option<NormalizeArg>,
    /// Conjunction groups N.
    #[arg(long)]
    n_groups: Option<usize>,
    /// Discriminants per group M.
    #[arg(long)]
    m_disc: Option<usize>,
    #[arg(long, value_enum)]
    init: Option<InitKind>,
    /// k-means restarts.
    #[arg(long)]
    restarts: Option<usize>,
    /// Farthest-first clustering distance threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Train the pairwise modular baseline.
    #[arg(long)]
    modn: bool,
    /// Seeded repetitions (seed, seed+1, ...); reports statistics instead of saving a model.
    #[arg(long)]
    repetitions: Option<usize>,
    /// Worker threads for repetitions.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args, Debug)]
struct TrainConvArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    train_images: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    /// Use only the first N training images.
    #[arg(long)]
    limit: Option<usize>,
    /// JSON stack spec (`{"input": [m, h, w], "layers": [...]}`).
    #[arg(long)]
    stack: Option<PathBuf>,
    #[arg(long)]
    head_groups: Option<usize>,
    #[arg(long)]
    head_per_group: Option<usize>,
    #[arg(long, value_enum)]
    head_init: Option<InitKind>,
    #[arg(long)]
    head_restarts: Option<usize>,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Model document (single, multiclass or convolutional).
    #[arg(long)]
    model: PathBuf,
    /// CSV dataset.
    #[arg(long, conflicts_with_all = ["images", "labels"])]
    data: Option<PathBuf>,
    #[arg(long, value_parser = parse_label_column, default_value = "first")]
    label_column: ldnn::data::LabelColumn,
    /// IDX image file.
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    #[arg(long)]
    limit: Option<usize>,
    /// Feature transform written by `train --normalize`.
    #[arg(long)]
    transform: Option<PathBuf>,
    /// Combine a single model's discriminants as the modular baseline (max-min).
    #[arg(long)]
    modn: bool,
}

#[derive(Args, Debug)]
struct BenchMoonsArgs {
    /// Network sizes n (n x n grids).
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Train every trial on the train/test sets drawn from `--seed` instead
    /// of drawing new sets per trial.
    #[arg(long)]
    fixed_data: bool,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 1000)]
    test_count: usize,
    #[arg(long, default_value_t = 50)]
    restarts: usize,
    #[arg(long, default_value_t = 0.3)]
    step: f64,
    #[arg(long, default_value_t = 0.1)]
    momentum: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    /// Write every trial report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchSpiralsArgs {
    #[arg(long, value_delimiter = ',', default_value = "2.2,2.0,1.5")]
    thresholds: Vec<f64>,
    /// Print cluster counts per threshold from 4.0 down to 0.5 instead of training.
    #[arg(long)]
    scan: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.3)]
    step: f64,
    #[arg(long, default_value_t = 0.1)]
    momentum: f64,
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BoundaryArgs {
    /// 2-input model document.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = -2.0)]
    x_min: f64,
    #[arg(long, default_value_t = 3.0)]
    x_max: f64,
    #[arg(long, default_value_t = -2.5)]
    y_min: f64,
    #[arg(long, default_value_t = 2.0)]
    y_max: f64,
    /// Lattice points per axis.
    #[arg(long, default_value_t = 200)]
    resolution: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// File name stem for the written images and CSV.
    #[arg(long, default_value = "boundary")]
    stem: String,
}

fn parse_label_column(s: &str) -> Result<ldnn::data::LabelColumn, String> {
    use ldnn::data::LabelColumn;
    match s {
        "first" => Ok(LabelColumn::First),
        "last" => Ok(LabelColumn::Last),
        other => other
            .parse()
            .map(LabelColumn::Index)
            .map_err(|_| format!("expected first, last or a column index, got {other:?}")),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenMoons {
            count,
            radius,
            width,
            sep,
            seed,
            out,
        } => commands::gen_moons(count, radius, width, sep, seed, &out),
        Command::GenSpirals { out } => commands::gen_spirals(&out),
        Command::Train(args) => commands::train(args),
        Command::TrainConv(args) => commands::train_conv(args),
        Command::Eval(args) => commands::eval(args),
        Command::GradCheck { seed, configs } => commands::grad_check(seed, configs),
        Command::BenchMoons(args) => commands::bench_moons(args),
        Command::BenchSpirals(args) => commands::bench_spirals(args),
        Command::Boundary(args) => commands::boundary(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
