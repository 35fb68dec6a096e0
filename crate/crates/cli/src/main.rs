//! `ddmatch`: data-driven model-reference synthesis from the command line.
//!
//! Exit status: 0 on success, 1 when synthesis is infeasible or a
//! certificate is refused, 2 on usage or input errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "ddmatch",
    version,
    about = "Data-driven model-reference controller synthesis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate experiments of a scenario and write trajectory CSV files.
    Simulate(SimulateArgs),
    /// Synthesize matching gains from data and write the outcome as JSON.
    Synthesize(SynthesizeArgs),
    /// Evaluate the noise-robust stability certificate of an SDP outcome.
    Verify(VerifyArgs),
    /// Run a Monte Carlo benchmark and write its report files.
    Benchmark(BenchmarkArgs),
    /// Write the built-in scenario configurations.
    Scenarios(ScenariosArgs),
}

/// Where the scenario comes from: a built-in name or a JSON file.
#[derive(Args, Debug, Clone)]
struct ScenarioSource {
    /// Built-in scenario: `stable` or `unstable`.
    #[arg(long, conflicts_with = "config")]
    scenario: Option<String>,
    /// Scenario configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Overrides for the synthesis options; unset flags keep the base values.
#[derive(Args, Debug, Clone, Default)]
struct SynthesisArgs {
    /// exact, relaxed_unstab, sdp or averaged_sdp.
    #[arg(long)]
    mode: Option<String>,
    /// Weight of the feed-forward matching term.
    #[arg(long)]
    lambda: Option<f64>,
    /// Weight of the trace bound on Qx P^-1 Qx'.
    #[arg(long)]
    lambda1: Option<f64>,
    /// Weight of the unit DC-gain penalty.
    #[arg(long)]
    dc_gain_weight: Option<f64>,
    /// Matching norm: l1 or fro.
    #[arg(long)]
    norm: Option<String>,
    /// Lower bound on the Lyapunov LMI eigenvalues.
    #[arg(long)]
    lmi_margin: Option<f64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// Samples per experiment (defaults to the scenario's horizon).
    #[arg(long)]
    horizon: Option<usize>,
    /// Measurement noise standard deviation.
    #[arg(long, conflicts_with = "snr_db", default_value_t = 0.0)]
    sigma: f64,
    /// Target average SNR in dB; the noise level is calibrated to it.
    #[arg(long)]
    snr_db: Option<f64>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run index; selects the excitation and noise streams.
    #[arg(long, default_value_t = 0)]
    run: usize,
    /// Number of repeated experiments. More than one writes a dataset
    /// directory with one trajectory per experiment.
    #[arg(long, default_value_t = 1)]
    experiments: usize,
    /// Include the clean states and the noise in the output.
    #[arg(long)]
    oracle: bool,
    /// Output trajectory CSV, or directory when `--experiments` > 1.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthesizeArgs {
    /// Snapshot JSON, trajectory CSV, block CSV directory or dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Reference model JSON (`{"a_m": [[..]], "b_m": [[..]]}`).
    #[arg(long, conflicts_with_all = ["scenario", "config"])]
    reference: Option<PathBuf>,
    #[command(flatten)]
    source: ScenarioSource,
    #[command(flatten)]
    synthesis: SynthesisArgs,
    /// Output outcome JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Outcome JSON written by `synthesize` in an SDP mode.
    #[arg(long)]
    outcome: PathBuf,
    /// The data used for synthesis, including the oracle noise blocks.
    #[arg(long)]
    data: PathBuf,
    /// Plant JSON, used to report the true closed-loop spectral radius.
    #[arg(long, conflicts_with_all = ["scenario", "config"])]
    plant: Option<PathBuf>,
    #[command(flatten)]
    source: ScenarioSource,
    /// Output certificate JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// Use 100 runs, up to 1000 experiments and SNR targets from 3 to 100 dB.
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Comma-separated experiment counts.
    #[arg(long, value_delimiter = ',')]
    experiment_counts: Option<Vec<usize>>,
    /// Comma-separated SNR targets in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_targets_db: Option<Vec<f64>>,
    /// Draw a fresh excitation for every experiment.
    #[arg(long)]
    independent_inputs: bool,
    #[command(flatten)]
    synthesis: SynthesisArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ScenariosArgs {
    /// Output directory for `stable.json` and `unstable.json`.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Synthesize(a) => commands::synthesize(a),
        Command::Verify(a) => commands::verify(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::Scenarios(a) => commands::scenarios(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
