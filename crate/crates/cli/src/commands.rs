use std::fmt;
use std::fs;
use std::path::Path;

use ddmatch::data::DEFAULT_RANK_TOL;
use ddmatch::io::{load_snapshot_source, save_trajectory};
use ddmatch::linalg::spectral_radius;
use ddmatch::{
    check_noise_energy, check_rank_condition, compute_alpha_beta, noise_robust_certificate,
    synthesize as run_synthesis, ControllerGains, Error, ReferenceModel, SnapshotMatrices,
    StateSpaceModel, SynthesisMode, SynthesisOptions, SynthesisOutcome,
};
use ddmatch_harness::{
    builtin_scenarios, calibrate_sigmas, run_monte_carlo, simulate_run, ScenarioConfig,
};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;

use crate::{
    BenchmarkArgs, ScenarioSource, ScenariosArgs, SimulateArgs, SynthesisArgs, SynthesizeArgs,
    VerifyArgs,
};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input.
    Input(String),
    /// The computation ran but the answer is negative.
    Rejected(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Rejected(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Rejected(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NoCertificate(_) | Error::Infeasible(_) => CliError::Rejected(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("malformed {what} {}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    fs::write(path, text)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn load_data(path: &Path) -> Result<(SnapshotMatrices<f64>, usize), CliError> {
    load_snapshot_source::<f64>(path).map_err(|e| match e {
        Error::Io(_) => CliError::Input(format!("cannot read data {}: {e}", path.display())),
        other => other.into(),
    })
}

fn load_scenario(src: &ScenarioSource) -> Result<Option<ScenarioConfig>, CliError> {
    let cfg = match (&src.scenario, &src.config) {
        (Some(name), _) => {
            let (stable, unstable) = builtin_scenarios();
            match name.as_str() {
                "stable" => stable,
                "unstable" => unstable,
                _ => {
                    return Err(CliError::Input(format!(
                        "unknown scenario `{name}` (expected `stable` or `unstable`)"
                    )))
                }
            }
        }
        (None, Some(path)) => read_json(path, "scenario config")?,
        (None, None) => return Ok(None),
    };
    cfg.validate()?;
    Ok(Some(cfg))
}

fn require_scenario(src: &ScenarioSource) -> Result<ScenarioConfig, CliError> {
    load_scenario(src)?
        .ok_or_else(|| CliError::Input("one of --scenario or --config is required".into()))
}

fn apply_synthesis(
    mut opts: SynthesisOptions,
    a: &SynthesisArgs,
) -> Result<SynthesisOptions, CliError> {
    if let Some(m) = &a.mode {
        opts.mode = m.parse()?;
    }
    if let Some(n) = &a.norm {
        opts.norm = n.parse()?;
    }
    if let Some(v) = a.lambda {
        opts.lambda = v;
    }
    if let Some(v) = a.lambda1 {
        opts.lambda1 = v;
    }
    if let Some(v) = a.dc_gain_weight {
        opts.dc_gain_weight = v;
    }
    if let Some(v) = a.lmi_margin {
        opts.lmi_margin = v;
    }
    opts.validate()?;
    Ok(opts)
}

fn print_gains(g: &ControllerGains<f64>) {
    let show = |label: &str, m: &DMatrix<f64>| {
        println!("{label} =");
        for row in m.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>10.4}")).collect();
            println!("  {}", cells.join(" "));
        }
    };
    show("K_x", &g.kx);
    show("K_r", &g.kr);
}

pub fn simulate(a: SimulateArgs) -> CliResult {
    let mut cfg = require_scenario(&a.source)?;
    if let Some(h) = a.horizon {
        cfg.horizon = h;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.experiments == 0 {
        return Err(CliError::Input("--experiments must be at least 1".into()));
    }
    cfg.validate()?;
    let sigma = match a.snr_db {
        Some(target) => {
            cfg.snr_targets_db = vec![target];
            calibrate_sigmas(&cfg)?[0]
        }
        None => a.sigma,
    };
    let records = simulate_run(&cfg, a.run, sigma, a.experiments)?;
    if records.len() == 1 {
        save_trajectory(&records[0], a.oracle, &a.out)?;
        println!("wrote {} (sigma = {sigma:.6e})", a.out.display());
    } else {
        fs::create_dir_all(&a.out).map_err(Error::from)?;
        for (k, rec) in records.iter().enumerate() {
            save_trajectory(rec, a.oracle, &a.out.join(format!("exp_{k:04}.csv")))?;
        }
        println!(
            "wrote {} experiments to {} (sigma = {sigma:.6e})",
            records.len(),
            a.out.display()
        );
    }
    Ok(())
}

pub fn synthesize(a: SynthesizeArgs) -> CliResult {
    let (snap, count) = load_data(&a.data)?;
    let reference: ReferenceModel<f64> = match &a.reference {
        Some(p) => read_json(p, "reference model")?,
        None => match load_scenario(&a.source)? {
            Some(cfg) => cfg.ref_model,
            None => {
                return Err(CliError::Input(
                    "a reference model is required: --reference, --scenario or --config".into(),
                ))
            }
        },
    };
    let base_mode = if count > 1 {
        SynthesisMode::AveragedSdp
    } else {
        SynthesisMode::Sdp
    };
    let opts = apply_synthesis(SynthesisOptions::with_mode(base_mode), &a.synthesis)?;

    let rank = check_rank_condition(&snap, DEFAULT_RANK_TOL);
    if !rank.satisfied {
        return Err(CliError::Rejected(format!(
            "rank condition violated: rank [U0; X0] = {} but n + m = {} is required (T = {})",
            rank.stacked_rank,
            rank.required,
            snap.horizon()
        )));
    }
    let outcome = run_synthesis(&snap, &reference, &opts)?;
    write_json(&a.out, &outcome)?;
    println!(
        "mode {}, status {}, {count} experiment(s)",
        outcome.mode, outcome.status
    );
    if let Some(g) = &outcome.gains {
        print_gains(g);
        println!(
            "matching residuals: {:.3e} (A_M), {:.3e} (B_M)",
            outcome.residual_am, outcome.residual_bm
        );
    }
    if !outcome.is_success() {
        return Err(CliError::Rejected(format!("synthesis {}", outcome.status)));
    }
    Ok(())
}

pub fn verify(a: VerifyArgs) -> CliResult {
    let outcome: SynthesisOutcome<f64> = read_json(&a.outcome, "synthesis outcome")?;
    let inputs = outcome.certificate_inputs.as_ref().ok_or_else(|| {
        CliError::Input(format!(
            "outcome in mode `{}` carries no certificate data; use an SDP mode",
            outcome.mode
        ))
    })?;
    let plant: Option<StateSpaceModel<f64>> = match &a.plant {
        Some(p) => Some(read_json(p, "plant")?),
        None => load_scenario(&a.source)?.map(|c| c.plant),
    };
    let (snap, count) = load_data(&a.data)?;
    if snap.x1.shape() != inputs.x1.shape() {
        return Err(CliError::Input(format!(
            "data has X1 of shape {:?}, the outcome was computed from {:?}",
            snap.x1.shape(),
            inputs.x1.shape()
        )));
    }
    let noise = check_noise_energy(&snap, count > 1)?;
    let margins = compute_alpha_beta(&inputs.x1, &inputs.qx, &inputs.p)?;
    let cert = noise_robust_certificate(&noise, &margins);
    write_json(&a.out, &cert)?;

    let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x:.4e}"));
    println!(
        "noise multipliers: gamma1 = {}, gamma2 = {}",
        opt(cert.gamma1),
        opt(cert.gamma2)
    );
    println!(
        "Lyapunov margins:  alpha = {:.4e}, beta = {:.4e}",
        cert.alpha, cert.beta
    );
    println!(
        "noise bound: {} (must stay below {:.4e})",
        opt(cert.lhs),
        cert.rhs
    );
    if let (Some(p), Some(g)) = (&plant, &outcome.gains) {
        let rho = spectral_radius(&p.closed_loop_matrix(g)?)?;
        println!("true closed-loop spectral radius: {rho:.6}");
    }
    if cert.certified {
        println!("verdict: CERTIFIED");
        Ok(())
    } else {
        let reason = cert.reason.clone().unwrap_or_default();
        println!("verdict: NOT CERTIFIED ({reason})");
        Err(CliError::Rejected(format!("not certified: {reason}")))
    }
}

pub fn benchmark(a: BenchmarkArgs) -> CliResult {
    let mut cfg = require_scenario(&a.source)?;
    if a.full_scale {
        cfg = cfg.full_scale();
    }
    if let Some(v) = a.runs {
        cfg.runs = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = &a.experiment_counts {
        cfg.experiment_counts = v.clone();
    }
    if let Some(v) = &a.snr_targets_db {
        cfg.snr_targets_db = v.clone();
    }
    if a.independent_inputs {
        cfg.repeated_inputs = false;
    }
    cfg.synthesis = apply_synthesis(cfg.synthesis, &a.synthesis)?;
    cfg.validate()?;

    let report = run_monte_carlo(&cfg)?;
    let written = report.write_all(&cfg, &a.out)?;
    println!("scenario {}: {} runs", cfg.name, cfg.runs);
    println!(
        "{:>10} {:>10} {:>6} {:>9} {:>12} {:>12}",
        "target dB", "mean dB", "N", "unstable", "med err Kx", "med err Kr"
    );
    for g in &report.summary {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
        println!(
            "{:>10.2} {:>10.2} {:>6} {:>9} {:>12} {:>12}",
            g.snr_target_db,
            g.snr_db_mean,
            g.experiments,
            g.unstable,
            opt(g.err_kx_median),
            opt(g.err_kr_median)
        );
    }
    println!("wrote {} files to {}", written.len(), a.out.display());
    Ok(())
}

pub fn scenarios(a: ScenariosArgs) -> CliResult {
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    let (stable, unstable) = builtin_scenarios();
    for cfg in [stable, unstable] {
        let path = a.out.join(format!("{}.json", cfg.name));
        write_json(&path, &cfg)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
