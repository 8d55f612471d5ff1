//! Command-line front end: dataset generation, training, evaluation,
//! certification and trace export.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "bfgnn", version, about = "Train and certify min-aggregation GNNs on Bellman-Ford steps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args, Clone)]
pub struct Common {
    /// JSON file with settings; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $BFGNN_OUT/<command>, or runs/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a labeled training manifest.
    GenTrain(GenTrainFlags),
    /// Write a suite of test graphs.
    GenTest(GenTestFlags),
    /// Train a model and write its trace and checkpoints.
    Train(TrainFlags),
    /// Multiplicative test error of a checkpoint.
    Eval(EvalFlags),
    /// Loss-gap certificate and envelope audit of a checkpoint.
    Certify(CertifyFlags),
    /// Write the exact Bellman-Ford weight construction.
    ExactBf(ExactFlags),
    /// Gaussian-smoothed copy of a trace CSV.
    Export(ExportFlags),
    /// Bellman-Ford steps (or walk enumeration) on a graph file.
    Oracle(OracleFlags),
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenTrainFlags {
    /// h-small, gk or experiment.
    #[arg(long)]
    set: Option<String>,
    #[arg(long = "K")]
    k: Option<usize>,
    /// Scale-set step counts, comma separated (default 1..=K).
    #[arg(long, value_delimiter = ',')]
    k_range: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenTestFlags {
    /// mixed (3-cycles, 4-cycles, complete, dense ER) or er-sparse.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Node count for er-sparse.
    #[arg(long)]
    n: Option<usize>,
    /// Graph count for er-sparse.
    #[arg(long)]
    count: Option<usize>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainFlags {
    /// two-layer-wide, one-layer or two-layer-narrow.
    #[arg(long)]
    preset: Option<String>,
    /// Training manifest; the experiment set is generated when absent.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Seed of the generated experiment set.
    #[arg(long)]
    data_seed: Option<u64>,
    /// Seed of the parameter initialization.
    #[arg(long)]
    seed: Option<u64>,
    /// L1 coefficient (0 trains on the plain squared error).
    #[arg(long)]
    l1: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Weight of the nonzero count in the regularized loss (default: 0.9 of the certificate limit).
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    eval_stride: Option<usize>,
    #[arg(long)]
    summary_stride: Option<usize>,
    /// Seed of the 200-graph evaluation suite.
    #[arg(long)]
    test_seed: Option<u64>,
    /// Orthant-wise L1 updates (true/false).
    #[arg(long)]
    orthant_l1: Option<bool>,
    /// Write a checkpoint every this many steps (0: final model only).
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// After L1 training, zero parameters with magnitude at or below this value...
    #[arg(long)]
    prune: Option<f64>,
    /// ...then refit the survivors for this many steps (0 skips both).
    #[arg(long)]
    refit_steps: Option<usize>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalFlags {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Suite file from gen-test; the mixed suite is generated when absent.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Evaluate on sparse ER graphs of this size instead.
    #[arg(long)]
    er_n: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of model applications (targets use K * reps steps).
    #[arg(long)]
    reps: Option<usize>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct CertifyFlags {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Training manifest the certificate refers to (default: the K-step set).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Run the envelope audit (true/false).
    #[arg(long)]
    audit: Option<bool>,
    #[arg(long)]
    audit_seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExactFlags {
    /// Use a named architecture instead of --L/--K/--m/--width.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long = "L")]
    layers: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExportFlags {
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct OracleFlags {
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long = "K")]
    k: Option<usize>,
    /// Enumerate walks instead of iterating Bellman-Ford steps.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    brute_force: bool,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenTrain(f) => commands::gen_train(f, &f.common),
        Command::GenTest(f) => commands::gen_test(f, &f.common),
        Command::Train(f) => commands::train(f, &f.common),
        Command::Eval(f) => commands::eval(f, &f.common),
        Command::Certify(f) => commands::certify(f, &f.common),
        Command::ExactBf(f) => commands::exact_bf(f, &f.common),
        Command::Export(f) => commands::export(f, &f.common),
        Command::Oracle(f) => commands::oracle(f, &f.common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
