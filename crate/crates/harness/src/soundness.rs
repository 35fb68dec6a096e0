use ddmatch::linalg::{singular_values, spectral_radius};
use ddmatch::{
    average_snapshots, build_snapshots, check_noise_energy, compute_alpha_beta,
    noise_robust_certificate, simulate_open_loop, solve_sdp, NoiseSpec, ReferenceModel, Result,
    StateSpaceModel, SynthesisMode, SynthesisOptions,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random plant with spectral radius in `[0.2, radius)` and an input matrix
/// whose smallest singular value is at least 0.2.
pub fn random_plant(rng: &mut ChaCha8Rng, n: usize, m: usize, radius: f64) -> StateSpaceModel<f64> {
    loop {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let Ok(rho) = spectral_radius(&a) else {
            continue;
        };
        if rho < 1e-3 {
            continue;
        }
        let a = a * (rng.random_range(0.2..radius) / rho);
        let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let sv = singular_values(&b);
        if sv[sv.len() - 1] < 0.2 {
            continue;
        }
        if let Ok(p) = StateSpaceModel::new(a, b) {
            return p;
        }
    }
}

/// Outcome of one randomized certificate trial.
#[derive(Clone, Debug, PartialEq)]
pub struct CertificateTrial {
    pub n: usize,
    pub sigma: f64,
    pub experiments: usize,
    /// True closed-loop spectral radius.
    pub rho: f64,
    /// The noise-robust certificate accepted the controller.
    pub certified: bool,
}

/// Random stable plant of order 1 to 3 with as many inputs as states,
/// `experiments` repeated open-loop experiments (shared input, `x(0) = 0`)
/// at noise level `sigma`, averaged SDP synthesis towards `0.5 I / 0.5 I`,
/// then the certificate evaluated on the averaged oracle noise.
///
/// Returns `Ok(None)` when synthesis yields no gains.
pub fn certificate_trial(
    rng: &mut ChaCha8Rng,
    sigma: f64,
    experiments: usize,
) -> Result<Option<CertificateTrial>> {
    let n = rng.random_range(1..=3usize);
    let plant = random_plant(rng, n, n, 0.95);
    let reference = ReferenceModel::scaled_identity(n, 0.5, 0.5)?;
    let u = DMatrix::from_fn(n, 30, |_, _| rng.random_range(-1.0..1.0));
    let base: u64 = rng.random();
    let snaps = (0..experiments)
        .map(|k| {
            let noise = NoiseSpec::new(sigma, base.wrapping_add(k as u64))?;
            build_snapshots(&simulate_open_loop(&plant, &u, &DVector::zeros(n), &noise)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let avg = average_snapshots(&snaps)?;
    let out = solve_sdp(
        &avg,
        &reference,
        &SynthesisOptions::with_mode(SynthesisMode::AveragedSdp),
    )?;
    let (Some(gains), Some(inputs)) = (&out.gains, &out.certificate_inputs) else {
        return Ok(None);
    };
    let rho = spectral_radius(&plant.closed_loop_matrix(gains)?)?;
    let certified = match compute_alpha_beta(&inputs.x1, &inputs.qx, &inputs.p) {
        Ok(margins) => {
            noise_robust_certificate(&check_noise_energy(&avg, true)?, &margins).certified
        }
        Err(_) => false,
    };
    Ok(Some(CertificateTrial {
        n,
        sigma,
        experiments,
        rho,
        certified,
    }))
}
