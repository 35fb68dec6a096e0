mod common;

use common::*;
use ddmatch::cert::{
    certificate_lhs, certificate_rhs, check_lyapunov, check_noise_energy, compute_alpha_beta,
    gaussian_average_bound, lmi_holds, lyapunov_inequality_holds, noise_robust_certificate,
};
use ddmatch::data::{average_snapshots, build_snapshots};
use ddmatch::linalg::{max_sym_eigenvalue, min_sym_eigenvalue, spectral_norm, spectral_radius};
use ddmatch::lti::{simulate_open_loop, NoiseSpec, ReferenceModel};
use ddmatch::synthesis::{solve_sdp, SynthesisMode, SynthesisOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let r = uniform(rng, n, n, -1.0, 1.0);
    &r * r.transpose() + DMatrix::identity(n, n) * rng.random_range(0.05..1.0)
}

#[test]
fn lmi_and_direct_lyapunov_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut yes, mut no) = (0, 0);
    for k in 0..400 {
        let n = rng.random_range(1..=4usize);
        let t = rng.random_range(n..=10usize);
        let p = if k % 5 == 0 {
            // Indefinite P: both verdicts must be negative.
            random_spd(&mut rng, n) - DMatrix::identity(n, n) * 3.0
        } else {
            random_spd(&mut rng, n)
        };
        let x1 = uniform(&mut rng, n, t, -1.0, 1.0);
        let qx = uniform(&mut rng, t, n, -1.0, 1.0) * rng.random_range(0.05..1.5);
        let lmi = lmi_holds(&x1, &qx, &p, 0.0).unwrap();
        let direct = lyapunov_inequality_holds(&x1, &qx, &p).unwrap();
        assert_eq!(lmi, direct, "instance {k}");
        if lmi {
            yes += 1;
        } else {
            no += 1;
        }
    }
    assert!(yes >= 50 && no >= 50, "{yes} feasible, {no} infeasible");
}

#[test]
fn certificate_is_monotone_in_alpha_and_beta() {
    let gammas = [
        (0.0, 0.0),
        (0.01, 0.02),
        (0.1, 0.1),
        (0.3, 0.5),
        (0.45, 2.0),
    ];
    let grid: Vec<f64> = (0..25)
        .map(|i| 10f64.powf(-3.0 + i as f64 * 0.25))
        .collect();
    for &(g1, g2) in &gammas {
        let lhs = certificate_lhs(g1, g2).unwrap();
        for &alpha in &grid {
            let mut prev = true;
            for &beta in &grid {
                let ok = lhs < certificate_rhs(alpha, beta);
                assert!(prev || !ok, "beta increase turned the verdict on");
                prev = ok;
            }
        }
        for &beta in &grid {
            let mut prev = true;
            for &alpha in grid.iter().rev() {
                let ok = lhs < certificate_rhs(alpha, beta);
                assert!(prev || !ok, "alpha decrease turned the verdict on");
                prev = ok;
            }
        }
    }
    assert!(certificate_lhs(0.5, 0.0).is_none());
}

/// `g * rhs - lhs >= 0` up to a relative tolerance.
fn ordering_holds(lhs: &DMatrix<f64>, rhs: &DMatrix<f64>, g: f64) -> bool {
    let scale = spectral_norm(lhs).max(1e-300);
    min_sym_eigenvalue(&(rhs * g - lhs)) >= -1e-9 * scale
}

#[test]
fn noise_multipliers_are_minimal() {
    for seed in 0..20u64 {
        let sigma = 0.05 + 0.1 * seed as f64;
        let snap = stable_snapshots(seed, 30, sigma);
        let report = check_noise_energy(&snap, false).unwrap();
        let (g1, g2) = (report.gamma1.unwrap(), report.gamma2.unwrap());
        assert!(g1 > 0.0 && g2 > 0.0);
        let mut padded = DMatrix::zeros(6, 30);
        padded.rows_mut(3, 3).copy_from(snap.v0.as_ref().unwrap());
        let data = snap.stacked();
        let (l1, r1) = (&padded * padded.transpose(), &data * data.transpose());
        let v1 = snap.v1.as_ref().unwrap();
        let (l2, r2) = (v1 * v1.transpose(), &snap.x1 * snap.x1.transpose());
        assert!(ordering_holds(&l1, &r1, g1) && ordering_holds(&l2, &r2, g2));
        assert!(!ordering_holds(&l1, &r1, 0.99 * g1), "gamma1 not minimal");
        assert!(!ordering_holds(&l2, &r2, 0.99 * g2), "gamma2 not minimal");
        assert_eq!(report.gamma1_ok, g1 < 0.5);
    }
}

#[test]
fn margins_satisfy_their_defining_orderings() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut checked = 0;
    while checked < 100 {
        let n = rng.random_range(1..=3usize);
        let t = rng.random_range(n..=12usize);
        let p = random_spd(&mut rng, n);
        let x1 = uniform(&mut rng, n, t, -1.0, 1.0);
        let qx = uniform(&mut rng, t, n, -1.0, 1.0) * 0.3;
        let Ok(mg) = compute_alpha_beta(&x1, &qx, &p) else {
            continue;
        };
        let energy = &x1 * x1.transpose();
        let scale = 1.0 + spectral_norm(&mg.m) + spectral_norm(&p);
        assert!(max_sym_eigenvalue(&(&mg.m - DMatrix::identity(t, t) * mg.beta)) <= 1e-9 * scale);
        assert!(max_sym_eigenvalue(&(&mg.xi + &energy * mg.alpha)) <= 1e-9 * scale);
        // alpha is the largest such constant.
        assert!(max_sym_eigenvalue(&(&mg.xi + &energy * (1.01 * mg.alpha))) > 0.0);
        checked += 1;
    }
}

#[test]
fn lyapunov_check_on_random_stable_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let n = rng.random_range(1..=4usize);
        let a = uniform(&mut rng, n, n, -1.0, 1.0);
        let rho = spectral_radius(&a).unwrap().max(1e-3);
        let a = a * (rng.random_range(0.1..0.95) / rho);
        // P = sum_k A^k A'^k solves A P A' - P = -I.
        let mut p = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for _ in 0..2000 {
            term = &a * term * a.transpose();
            p += &term;
            if term.amax() < 1e-18 {
                break;
            }
        }
        assert!(check_lyapunov(&a, &p).unwrap());
        let unstable = &a * (1.2 / spectral_radius(&a).unwrap());
        assert!(!check_lyapunov(&unstable, &p).unwrap());
    }
}

#[test]
fn averaged_noise_norm_respects_the_gaussian_bound() {
    let (sigma, t, n, mu) = (1.0, 30usize, 3usize, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    for n_exp in [1usize, 10, 100] {
        let (bound, confidence) = gaussian_average_bound(sigma, t, n_exp, n, mu);
        let samples = 1000;
        let mut inside = 0;
        for _ in 0..samples {
            let mut avg = DMatrix::<f64>::zeros(n, t);
            for _ in 0..n_exp {
                avg += DMatrix::from_fn(n, t, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sigma * z
                });
            }
            avg /= n_exp as f64;
            if spectral_norm(&avg) <= bound {
                inside += 1;
            }
        }
        let freq = inside as f64 / samples as f64;
        assert!(freq >= confidence, "N={n_exp}: {freq} < {confidence}");
    }
}

/// Random matchable instance with repeated experiments sharing input and x0 = 0.
fn repeated_experiment_trial(
    rng: &mut ChaCha8Rng,
    sigma: f64,
    n_exp: usize,
) -> Option<(f64, bool)> {
    let n = rng.random_range(1..=3usize);
    let plant = random_plant(rng, n, n, 0.95);
    let reference = ReferenceModel::scaled_identity(n, 0.5, 0.5).ok()?;
    let u = uniform(rng, n, 30, -1.0, 1.0);
    let base: u64 = rng.random();
    let snaps: Vec<_> = (0..n_exp)
        .map(|k| {
            let noise = NoiseSpec::new(sigma, base.wrapping_add(k as u64)).unwrap();
            build_snapshots(&simulate_open_loop(&plant, &u, &DVector::zeros(n), &noise).unwrap())
                .unwrap()
        })
        .collect();
    let avg = average_snapshots(&snaps).ok()?;
    let out = solve_sdp(
        &avg,
        &reference,
        &SynthesisOptions::with_mode(SynthesisMode::AveragedSdp),
    )
    .ok()?;
    let gains = out.gains.as_ref()?;
    let inputs = out.certificate_inputs.as_ref()?;
    let margins = compute_alpha_beta(&inputs.x1, &inputs.qx, &inputs.p).ok()?;
    let report = check_noise_energy(&avg, true).ok()?;
    let cert = noise_robust_certificate(&report, &margins);
    let rho = spectral_radius(&(plant.a() + plant.b() * &gains.kx)).ok()?;
    Some((rho, report.both_hold && cert.certified))
}

#[test]
fn fired_certificates_imply_stability() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut fired = 0;
    for k in 0..120 {
        let sigma = [0.002, 0.01, 0.03][k % 3];
        let Some((rho, certified)) = repeated_experiment_trial(&mut rng, sigma, 10) else {
            continue;
        };
        if certified {
            fired += 1;
            assert!(rho < 1.0, "certified instance with spectral radius {rho}");
        }
    }
    assert!(fired >= 30, "only {fired} certificates fired");
}
