//! Monte Carlo benchmarks for data-driven model-reference synthesis.
//!
//! A [`ScenarioConfig`] fixes a plant, a reference model, the true matching
//! gains and a sweep over noise levels and experiment counts.
//! [`run_monte_carlo`] collects repeated noisy experiments, averages them,
//! synthesizes gains and scores them against the truth; [`BenchmarkReport`]
//! holds the per-run rows and the grouped aggregates and writes them as CSV
//! and JSON.

pub mod metrics;
pub mod monte_carlo;
pub mod report;
pub mod scenario;
pub mod serde_float;
pub mod soundness;

pub use metrics::{compute_snr, gain_error, is_stable, median, STABILITY_MARGIN};
pub use monte_carlo::{
    calibrate_sigmas, pilot_energy, run_monte_carlo, run_single, sigma_for_snr,
    simulate_experiment, simulate_run, tracking_response, RunRecord, TrackingTrace,
};
pub use report::{read_rows_csv, summarize, BenchmarkReport, CsvRow, GroupSummary, SummaryFile};
pub use scenario::{
    benchmark_options, builtin_scenarios, InputLaw, ScenarioConfig, TrackingProfile,
};
pub use soundness::{certificate_trial, random_plant, CertificateTrial};
