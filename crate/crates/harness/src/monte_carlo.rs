use std::time::Instant;

use ddmatch::{
    average_snapshots, build_snapshots, reference_response, simulate_closed_loop,
    simulate_open_loop, synthesize, ControllerGains, ExperimentRecord, NoiseSpec, Result,
    SnapshotMatrices,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{closed_loop_radius, compute_snr, gain_error, is_stable, mean_snr_db};
use crate::report::{summarize, BenchmarkReport};
use crate::scenario::{InputLaw, ScenarioConfig};
use crate::serde_float;

/// RNG stream reserved for the calibration pilot; runs use streams `0..runs`.
const PILOT_STREAM: u64 = u64::MAX;
const PILOT_EXPERIMENTS: usize = 16;
const PILOT_ROUNDS: usize = 4;

/// One `(run, noise level, experiment count)` cell of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub target_index: usize,
    #[serde(with = "serde_float")]
    pub snr_target_db: f64,
    pub sigma: f64,
    pub experiments: usize,
    /// Mean over channels of `snr_channels_db`.
    #[serde(with = "serde_float")]
    pub snr_db: f64,
    /// Per-channel SNR averaged over the experiments that were used.
    #[serde(with = "serde_float::vec")]
    pub snr_channels_db: Vec<f64>,
    pub err_kx: Option<f64>,
    pub err_kr: Option<f64>,
    pub rho_cl: Option<f64>,
    pub stable: bool,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    /// Wall-clock solve time in milliseconds.
    pub ms: f64,
    pub gains: Option<ControllerGains<f64>>,
}

/// Excitations and noise seeds of one run.
struct RunPlan {
    excitations: Vec<DMatrix<f64>>,
    noise_seeds: Vec<u64>,
}

impl RunPlan {
    fn new(cfg: &ScenarioConfig, stream: u64, experiments: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let (rows, lo, hi) = match cfg.input_law {
            InputLaw::OpenLoopUniform { lo, hi } => (cfg.m(), lo, hi),
            InputLaw::ClosedLoop { lo, hi, .. } => (cfg.n(), lo, hi),
        };
        let draw = |rng: &mut ChaCha8Rng| {
            DMatrix::from_fn(rows, cfg.horizon, |_, _| rng.random_range(lo..hi))
        };
        let mut excitations = vec![draw(&mut rng)];
        let noise_seeds = (0..experiments).map(|_| rng.random()).collect();
        if !cfg.repeated_inputs {
            excitations.extend((1..experiments).map(|_| draw(&mut rng)));
        }
        Self {
            excitations,
            noise_seeds,
        }
    }

    fn excitation(&self, k: usize) -> &DMatrix<f64> {
        &self.excitations[k.min(self.excitations.len() - 1)]
    }

    fn simulate(
        &self,
        cfg: &ScenarioConfig,
        sigma: f64,
        count: usize,
    ) -> Result<Vec<ExperimentRecord<f64>>> {
        (0..count)
            .map(|k| {
                simulate_experiment(
                    cfg,
                    self.excitation(k),
                    &NoiseSpec::new(sigma, self.noise_seeds[k])?,
                )
            })
            .collect()
    }
}

/// The first `count` experiments of run `run` at noise level `sigma`, exactly
/// as the sweep generates them.
pub fn simulate_run(
    cfg: &ScenarioConfig,
    run: usize,
    sigma: f64,
    count: usize,
) -> Result<Vec<ExperimentRecord<f64>>> {
    cfg.validate()?;
    RunPlan::new(cfg, run as u64, count).simulate(cfg, sigma, count)
}

/// One experiment from `x(0) = 0` under the scenario's input law.
pub fn simulate_experiment(
    cfg: &ScenarioConfig,
    excitation: &DMatrix<f64>,
    noise: &NoiseSpec<f64>,
) -> Result<ExperimentRecord<f64>> {
    let x0 = DVector::zeros(cfg.n());
    match &cfg.input_law {
        InputLaw::OpenLoopUniform { .. } => simulate_open_loop(&cfg.plant, excitation, &x0, noise),
        InputLaw::ClosedLoop { pre_controller, .. } => {
            simulate_closed_loop(&cfg.plant, pre_controller, excitation, &x0, noise)
        }
    }
}

/// Per-channel energy of a noiseless pilot experiment.
pub fn pilot_energy(cfg: &ScenarioConfig) -> Result<Vec<f64>> {
    let plan = RunPlan::new(cfg, PILOT_STREAM, 1);
    let rec = simulate_experiment(cfg, plan.excitation(0), &NoiseSpec::noiseless())?;
    Ok(rec
        .states_measured
        .row_iter()
        .map(|r| r.norm_squared())
        .collect())
}

/// Noise level whose expected average SNR over channels equals `target_db`
/// for a signal with the given per-channel energies over `samples` samples.
pub fn sigma_for_snr(energies: &[f64], samples: usize, target_db: f64) -> f64 {
    let signal_db = mean_snr_db(
        &energies
            .iter()
            .map(|e| 10.0 * e.log10())
            .collect::<Vec<_>>(),
    );
    (10f64.powf((signal_db - target_db) / 10.0) / samples as f64).sqrt()
}

/// Noise level for each SNR target.
///
/// The first guess inverts the SNR definition on the noiseless pilot energy.
/// Under closed-loop collection the noise also drives the true state, so the
/// guess is refined on noisy pilot experiments until their mean achieved SNR
/// matches the target.
pub fn calibrate_sigmas(cfg: &ScenarioConfig) -> Result<Vec<f64>> {
    let energy = pilot_energy(cfg)?;
    let plan = RunPlan::new(cfg, PILOT_STREAM, PILOT_EXPERIMENTS);
    cfg.snr_targets_db
        .iter()
        .map(|&target| {
            let mut sigma = sigma_for_snr(&energy, cfg.horizon + 1, target);
            if !(sigma > 0.0) || !sigma.is_finite() {
                return Ok(sigma.max(0.0));
            }
            for _ in 0..PILOT_ROUNDS {
                let mut achieved = 0.0;
                for rec in plan.simulate(cfg, sigma, PILOT_EXPERIMENTS)? {
                    let (clean, v) = oracle(&rec);
                    achieved += mean_snr_db(&compute_snr(clean, v)?);
                }
                achieved /= PILOT_EXPERIMENTS as f64;
                if !achieved.is_finite() {
                    break;
                }
                sigma *= 10f64.powf((achieved - target) / 20.0);
            }
            Ok(sigma)
        })
        .collect()
}

fn oracle(rec: &ExperimentRecord<f64>) -> (&DMatrix<f64>, &DMatrix<f64>) {
    let clean = rec
        .states_clean
        .as_ref()
        .expect("simulated records carry oracle data");
    let v = rec
        .noise
        .as_ref()
        .expect("simulated records carry oracle data");
    (clean, v)
}

/// Run the sweep. Runs execute in parallel; rows come back ordered by run,
/// noise level and experiment count, so the report does not depend on
/// scheduling.
pub fn run_monte_carlo(cfg: &ScenarioConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let sigmas = calibrate_sigmas(cfg)?;
    let per_run: Vec<Vec<RunRecord>> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| run_single(cfg, run, &sigmas))
        .collect::<Result<_>>()?;
    let rows: Vec<RunRecord> = per_run.into_iter().flatten().collect();
    Ok(BenchmarkReport {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        runs: cfg.runs,
        sigmas,
        summary: summarize(&rows),
        rows,
    })
}

/// All noise levels and experiment counts of one run.
pub fn run_single(cfg: &ScenarioConfig, run: usize, sigmas: &[f64]) -> Result<Vec<RunRecord>> {
    let max_n = cfg.max_experiments();
    let plan = RunPlan::new(cfg, run as u64, max_n);
    let mut rows = Vec::with_capacity(sigmas.len() * cfg.experiment_counts.len());
    for (target_index, &sigma) in sigmas.iter().enumerate() {
        let mut snaps = Vec::with_capacity(max_n);
        let mut snr = Vec::with_capacity(max_n);
        for rec in plan.simulate(cfg, sigma, max_n)? {
            let (clean, v) = oracle(&rec);
            snr.push(compute_snr(clean, v)?);
            snaps.push(build_snapshots(&rec)?);
        }
        for &count in &cfg.experiment_counts {
            let channels: Vec<f64> = (0..cfg.n())
                .map(|j| snr[..count].iter().map(|c| c[j]).sum::<f64>() / count as f64)
                .collect();
            let mut row = solve_cell(cfg, &snaps[..count]);
            row.run = run;
            row.target_index = target_index;
            row.snr_target_db = cfg.snr_targets_db[target_index];
            row.sigma = sigma;
            row.experiments = count;
            row.snr_db = mean_snr_db(&channels);
            row.snr_channels_db = channels;
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Average, synthesize and score; failures become rows instead of errors.
fn solve_cell(cfg: &ScenarioConfig, snaps: &[SnapshotMatrices<f64>]) -> RunRecord {
    let mut row = RunRecord {
        run: 0,
        target_index: 0,
        snr_target_db: 0.0,
        sigma: 0.0,
        experiments: snaps.len(),
        snr_db: 0.0,
        snr_channels_db: Vec::new(),
        err_kx: None,
        err_kr: None,
        rho_cl: None,
        stable: false,
        status: "error".into(),
        detail: None,
        ms: 0.0,
        gains: None,
    };
    let start = Instant::now();
    let outcome =
        average_snapshots(snaps).and_then(|avg| synthesize(&avg, &cfg.ref_model, &cfg.synthesis));
    row.ms = start.elapsed().as_secs_f64() * 1e3;
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            row.detail = Some(e.to_string());
            return row;
        }
    };
    row.status = outcome.status.to_string();
    let Some(gains) = outcome.gains else {
        return row;
    };
    let scored = gain_error(&gains.kx, &cfg.optimal_gains.kx).and_then(|ex| {
        let er = gain_error(&gains.kr, &cfg.optimal_gains.kr)?;
        Ok((ex, er, closed_loop_radius(&cfg.plant, &gains)?))
    });
    match scored {
        Ok((ex, er, rho)) => {
            row.err_kx = Some(ex);
            row.err_kr = Some(er);
            row.rho_cl = Some(rho);
            row.stable = is_stable(rho);
        }
        Err(e) => row.detail = Some(e.to_string()),
    }
    row.gains = Some(gains);
    row
}

/// Reference, reference-model response and noiseless closed-loop response
/// to the scenario's piecewise-constant tracking profile.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackingTrace {
    pub references: DMatrix<f64>,
    pub desired: DMatrix<f64>,
    pub achieved: DMatrix<f64>,
}

pub fn tracking_response(
    cfg: &ScenarioConfig,
    gains: &ControllerGains<f64>,
) -> Result<TrackingTrace> {
    let profile = &cfg.tracking;
    let len = profile.levels.len() * profile.hold;
    let references = DMatrix::from_fn(cfg.n(), len, |_, t| profile.levels[t / profile.hold]);
    let x0 = DVector::zeros(cfg.n());
    let desired = reference_response(&cfg.ref_model, &references, &x0)?;
    let achieved =
        simulate_closed_loop(&cfg.plant, gains, &references, &x0, &NoiseSpec::noiseless())?
            .states_measured;
    Ok(TrackingTrace {
        references,
        desired,
        achieved,
    })
}
