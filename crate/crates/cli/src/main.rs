//! Command-line interface: data generation, training, evaluation,
//! single-record prediction, the component ablation, and the
//! hierarchy-level sweep.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "msgaf", version, about = "Microservice latency estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with its topology sidecar.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Evaluate(EvaluateArgs),
    /// Estimate latency for a single window record.
    Predict(PredictArgs),
    /// Train every ablation variant across seeds.
    Ablate(GridArgs),
    /// Train 1..=4-level hierarchies across seeds.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub(crate) out: String,
    /// Topology template: boutique11, sockshop13, or random.
    #[arg(long, default_value = "boutique11")]
    pub(crate) template: String,
    /// Node count for the random template.
    #[arg(long)]
    pub(crate) nodes: Option<usize>,
    /// Number of windows to generate.
    #[arg(long)]
    pub(crate) windows: usize,
    #[arg(long, default_value_t = 1)]
    pub(crate) seed: u64,
    /// Scenario mix, e.g. "cpu=0.25,io=0.25,network=0.25,mixed=0.25".
    #[arg(long)]
    pub(crate) scenario_mix: Option<String>,
    /// Trace shape: smooth or bursty.
    #[arg(long, default_value = "bursty")]
    pub(crate) trace: String,
    /// Base request rate at the entry services (requests/second).
    #[arg(long, default_value_t = 6.0)]
    pub(crate) base_rps: f64,
    /// Ground-truth oracle: queueing or linear.
    #[arg(long, default_value = "queueing")]
    pub(crate) oracle: String,
    /// Lower bound of the quota provisioning headroom.
    #[arg(long, default_value_t = 1.6)]
    pub(crate) headroom_min: f64,
    /// Upper bound of the quota provisioning headroom.
    #[arg(long, default_value_t = 3.4)]
    pub(crate) headroom_max: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory containing dataset.jsonl and topology.json.
    #[arg(long)]
    pub(crate) data: String,
    /// Run directory for checkpoint, config echo, and logs.
    #[arg(long)]
    pub(crate) out: String,
    /// JSON config file; flags below override it.
    #[arg(long)]
    pub(crate) config: Option<String>,
    #[arg(long)]
    pub(crate) seed: Option<u64>,
    /// Target percentile: 50, 90, or 99.
    #[arg(long)]
    pub(crate) percentile: Option<u8>,
    /// Model variant: full, no_multiscale, no_fusion, no_scene.
    #[arg(long)]
    pub(crate) variant: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directory produced by `train`.
    #[arg(long)]
    pub(crate) run: String,
    #[arg(long)]
    pub(crate) data: String,
    /// Config override; must match the checkpoint schema.
    #[arg(long)]
    pub(crate) config: Option<String>,
}

#[derive(Args)]
struct PredictArgs {
    /// Run directory produced by `train`.
    #[arg(long)]
    pub(crate) run: String,
    /// JSON file holding one window record.
    #[arg(long)]
    pub(crate) record: String,
    /// Topology sidecar; defaults to topology.json next to the record.
    #[arg(long)]
    pub(crate) topology: Option<String>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    pub(crate) data: String,
    #[arg(long)]
    pub(crate) out: String,
    #[arg(long)]
    pub(crate) config: Option<String>,
    /// Comma-separated seeds, at least three.
    #[arg(long, default_value = "1,2,3")]
    pub(crate) seeds: String,
    /// Comma-separated variants to ablate.
    #[arg(long, default_value = "full,no_multiscale,no_fusion,no_scene")]
    pub(crate) variants: String,
    #[arg(long)]
    pub(crate) percentile: Option<u8>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    pub(crate) data: String,
    #[arg(long)]
    pub(crate) out: String,
    #[arg(long)]
    pub(crate) config: Option<String>,
    #[arg(long, default_value = "1,2,3")]
    pub(crate) seeds: String,
    /// Comma-separated level counts from 1..=4.
    #[arg(long, default_value = "1,2,3,4")]
    pub(crate) levels: String,
    #[arg(long)]
    pub(crate) percentile: Option<u8>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are successful exits
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(args) => commands::generate(args),
        Command::Train(args) => commands::train(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Predict(args) => commands::predict(args),
        Command::Ablate(args) => commands::ablate(args),
        Command::Sweep(args) => commands::sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(commands::CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
