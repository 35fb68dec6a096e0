mod common;

use std::time::Instant;

use common::*;
use ddmatch::linalg::spectral_norm;
use ddmatch::sdp::SolveStatus;
use ddmatch::synthesis::{solve_exact, solve_sdp, verify_matching, SynthesisOptions};

#[test]
fn stable_scenario_exact_and_sdp() {
    let snap = stable_snapshots(7, 30, 0.0);
    let t0 = Instant::now();
    let ex = solve_exact(&snap, &stable_reference()).unwrap();
    let t_exact = t0.elapsed();
    let g = ex.gains.clone().unwrap();
    let truth = stable_true_gains();
    let printed = stable_printed_gains();
    println!(
        "exact {:?} errs {:e} {:e}",
        t_exact,
        spectral_norm(&(&g.kx - &truth.kx)),
        spectral_norm(&(&g.kx - &printed.kx))
    );
    assert!(spectral_norm(&(&g.kx - &truth.kx)) <= 1e-6);
    assert!(spectral_norm(&(&g.kr - &truth.kr)) <= 1e-6);
    assert!(spectral_norm(&(&g.kx - &printed.kx)) <= 1e-3);
    assert!(spectral_norm(&(&g.kr - &printed.kr)) <= 1e-3);

    let t0 = Instant::now();
    let sdp = solve_sdp(&snap, &stable_reference(), &SynthesisOptions::default()).unwrap();
    println!(
        "sdp {:?} status {} obj {:e} iters {} lmi {:?} P {:?}",
        t0.elapsed(),
        sdp.status,
        sdp.objective_value,
        sdp.solver_iterations,
        sdp.lmi_min_eigenvalue,
        sdp.p.as_ref().map(ddmatch::linalg::sym_eigenvalues)
    );
    assert_eq!(sdp.status, SolveStatus::Optimal);
    let gs = sdp.gains.unwrap();
    println!(
        "sdp gain err {:e} {:e}",
        spectral_norm(&(&gs.kx - &g.kx)),
        spectral_norm(&(&gs.kr - &g.kr))
    );
    assert!(sdp.objective_value <= 1e-6);
    assert!(spectral_norm(&(&gs.kx - &g.kx)) <= 1e-4);
    assert!(spectral_norm(&(&gs.kr - &g.kr)) <= 1e-4);
    assert!(sdp.lmi_min_eigenvalue.unwrap() >= 1e-10 - 1e-12);
}

#[test]
fn unstable_scenario_exact() {
    let snap = unstable_snapshots(3, 30, 0.0);
    let ex = solve_exact(&snap, &unstable_reference()).unwrap();
    let g = ex.gains.unwrap();
    let (ra, rb) = verify_matching(&unstable_plant(), &g, &unstable_reference()).unwrap();
    assert!(ra <= 1e-6 && rb <= 1e-6, "{ra} {rb}");
}

use ddmatch::data::{average_snapshots, check_rank_condition, SnapshotMatrices, DEFAULT_RANK_TOL};
use ddmatch::linalg::{lstsq_min_norm, null_space_basis, spectral_radius};
use ddmatch::lti::StateSpaceModel;
use ddmatch::sdp::export_problem;
use ddmatch::synthesis::{
    build_sdp_problem, reconstruct_closed_loop, recover_gains, solve_relaxed, MatchNorm,
    SynthesisMode,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_snapshots(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
) -> (StateSpaceModel<f64>, SnapshotMatrices<f64>) {
    use ddmatch::data::build_snapshots;
    use ddmatch::lti::{simulate_open_loop, NoiseSpec};
    let plant = random_plant(rng, n, m, 1.2);
    let t = 4 * (n + m) + 4;
    let u = uniform(rng, m, t, -1.0, 1.0);
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let rec = simulate_open_loop(&plant, &u, &x0, &NoiseSpec::noiseless()).unwrap();
    (plant, build_snapshots(&rec).unwrap())
}

/// Random solution of `X0 G = target` (affine family through the minimum-norm one).
fn random_consistent(
    rng: &mut ChaCha8Rng,
    x0: &DMatrix<f64>,
    target: &DMatrix<f64>,
) -> DMatrix<f64> {
    let base = lstsq_min_norm(x0, target, 1e-12);
    let null = null_space_basis(x0, 1e-10);
    let y = uniform(rng, null.ncols(), target.ncols(), -3.0, 3.0);
    base + null * y
}

#[test]
fn data_closed_loop_equals_model_closed_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..60 {
        let n = rng.random_range(1..=3usize);
        let m = rng.random_range(1..=3usize);
        let (plant, snap) = random_snapshots(&mut rng, n, m);
        let gx = random_consistent(&mut rng, &snap.x0, &DMatrix::identity(n, n));
        let gr = random_consistent(&mut rng, &snap.x0, &DMatrix::zeros(n, n));
        let kx = &snap.u0 * &gx;
        let kr = &snap.u0 * &gr;
        let (a_cl, b_cl) = reconstruct_closed_loop(&snap, &gx, &gr, None).unwrap();
        let scale = 1.0 + gx.amax() + gr.amax();
        assert!((plant.a() + plant.b() * &kx - a_cl).amax() < 1e-8 * scale);
        assert!((plant.b() * &kr - b_cl).amax() < 1e-8 * scale);
        // The oracle form agrees on noiseless data.
        let (a_or, _) = reconstruct_closed_loop(&snap, &gx, &gr, Some(plant.a())).unwrap();
        assert!((a_or - plant.a() - plant.b() * &kx).amax() < 1e-8 * scale);
    }
}

#[test]
fn oracle_reconstruction_on_noisy_data() {
    let snap = stable_snapshots(21, 30, 0.4);
    let plant = stable_plant();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gx = random_consistent(&mut rng, &snap.x0, &DMatrix::identity(3, 3));
    let gr = DMatrix::zeros(30, 3);
    let (a_cl, b_cl) = reconstruct_closed_loop(&snap, &gx, &gr, Some(plant.a())).unwrap();
    let kx = &snap.u0 * &gx;
    assert!((a_cl - plant.a() - plant.b() * kx).amax() < 1e-8 * (1.0 + gx.amax()));
    assert_eq!(b_cl, DMatrix::zeros(3, 3));
}

#[test]
fn exact_solutions_reproduce_the_reference() {
    let snap = stable_snapshots(8, 30, 0.0);
    let out = solve_exact(&snap, &stable_reference()).unwrap();
    let (a_cl, b_cl) = reconstruct_closed_loop(
        &snap,
        out.gx.as_ref().unwrap(),
        out.gr.as_ref().unwrap(),
        None,
    )
    .unwrap();
    assert!((&a_cl - stable_reference().a_m()).amax() < 1e-8);
    assert!((&b_cl - stable_reference().b_m()).amax() < 1e-8);
    let rho = spectral_radius(&a_cl).unwrap();
    assert!((rho - spectral_radius(stable_reference().a_m()).unwrap()).abs() < 1e-8 && rho < 1.0);
}

#[test]
fn null_space_perturbations_leave_gains_unchanged() {
    let snap = stable_snapshots(13, 30, 0.0);
    assert!(check_rank_condition(&snap, DEFAULT_RANK_TOL).satisfied);
    let out = solve_exact(&snap, &stable_reference()).unwrap();
    let g = out.gains.unwrap();
    let gx = out.gx.unwrap();
    let null = null_space_basis(&snap.stacked(), 1e-10);
    assert_eq!(null.ncols(), 30 - 6);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let pert = &null * uniform(&mut rng, null.ncols(), 3, -1.0, 1.0);
        let kx = &snap.u0 * (&gx + pert);
        assert!(spectral_norm(&(kx - &g.kx)) <= 1e-8);
    }
}

#[test]
fn recover_gains_matches_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.random_range(1..=4usize);
        let t = rng.random_range(n..12usize);
        let m = rng.random_range(1..=3usize);
        let r = uniform(&mut rng, n, n, -1.0, 1.0);
        let p = &r * r.transpose() + DMatrix::identity(n, n) * 0.5;
        let qx = uniform(&mut rng, t, n, -1.0, 1.0);
        let qr = uniform(&mut rng, t, n, -1.0, 1.0);
        let u0 = uniform(&mut rng, m, t, -1.0, 1.0);
        let g = recover_gains(&qx, &qr, &p, &u0).unwrap();
        let pinv = p.clone().try_inverse().unwrap();
        assert!((g.kx - &u0 * &qx * &pinv).amax() < 1e-10);
        assert!((g.kr - &u0 * &qr * &pinv).amax() < 1e-10);
        // Qx = Gx P recovers U0 Gx.
        let gx = uniform(&mut rng, t, n, -1.0, 1.0);
        let g2 = recover_gains(&(&gx * &p), &qr, &p, &u0).unwrap();
        assert!((g2.kx - &u0 * &gx).amax() < 1e-10);
    }
}

#[test]
fn relaxed_feasible_instance_has_zero_objective() {
    let snap = stable_snapshots(4, 30, 0.0);
    for norm in [MatchNorm::L1, MatchNorm::Frobenius] {
        let opts = SynthesisOptions {
            norm,
            ..SynthesisOptions::with_mode(SynthesisMode::RelaxedUnstab)
        };
        let out = solve_relaxed(&snap, &stable_reference(), &opts).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!(
            out.objective_value <= 1e-6,
            "{norm:?}: {}",
            out.objective_value
        );
        let g = out.gains.unwrap();
        assert!(spectral_norm(&(&g.kx - &stable_true_gains().kx)) <= 1e-6);
        assert!(spectral_norm(&(&g.kr - &stable_true_gains().kr)) <= 1e-6);
    }
}

/// Plant whose input matrix has rank 2, so `B K_r = 0.8 I` is unreachable.
fn rank_deficient_snapshots() -> SnapshotMatrices<f64> {
    use ddmatch::data::build_snapshots;
    use ddmatch::lti::{simulate_open_loop, NoiseSpec};
    let b = nalgebra::dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0];
    let plant = StateSpaceModel::new(stable_plant().a().clone(), b).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let u = uniform(&mut rng, 2, 30, -2.0, 2.0);
    let x0 = DVector::from_vec(vec![0.5, -0.3, 0.2]);
    build_snapshots(&simulate_open_loop(&plant, &u, &x0, &NoiseSpec::noiseless()).unwrap()).unwrap()
}

/// `min ||X1 G - target||_F  s.t.  X0 G = rhs` in closed form.
fn constrained_ls(snap: &SnapshotMatrices<f64>, target: &DMatrix<f64>, rhs: &DMatrix<f64>) -> f64 {
    let base = lstsq_min_norm(&snap.x0, rhs, 1e-12);
    let null = null_space_basis(&snap.x0, 1e-10);
    let resid0 = &snap.x1 * &base - target;
    let basis = &snap.x1 * &null;
    let y = lstsq_min_norm(&basis, &(-&resid0), 1e-12);
    (resid0 + basis * y).norm()
}

#[test]
fn relaxed_unmatchable_instance_against_least_squares() {
    let snap = rank_deficient_snapshots();
    let reference = stable_reference();
    assert_eq!(
        solve_exact(&snap, &reference).unwrap().status,
        SolveStatus::Infeasible
    );
    let opts = SynthesisOptions {
        norm: MatchNorm::Frobenius,
        ..SynthesisOptions::with_mode(SynthesisMode::RelaxedUnstab)
    };
    let out = solve_relaxed(&snap, &reference, &opts).unwrap();
    assert_eq!(out.status, SolveStatus::Optimal);
    let oracle = constrained_ls(&snap, reference.a_m(), &DMatrix::identity(3, 3))
        + constrained_ls(&snap, reference.b_m(), &DMatrix::zeros(3, 3));
    assert!(out.objective_value > 1e-3);
    assert!(
        (out.objective_value - oracle).abs() <= 1e-6 * (1.0 + oracle),
        "{} vs {oracle}",
        out.objective_value
    );
    assert!(out.residual_bm > 0.0);

    let heavy = SynthesisOptions {
        lambda: 10.0,
        ..opts
    };
    let out10 = solve_relaxed(&snap, &reference, &heavy).unwrap();
    assert!(out10.residual_bm <= out.residual_bm + 1e-6);
}

#[test]
fn sdp_outcomes_satisfy_lyapunov_by_recheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for k in 0..10 {
        let snap = if k % 2 == 0 {
            stable_snapshots(rng.random(), 30, 0.05)
        } else {
            unstable_snapshots(rng.random(), 30, 0.05)
        };
        let reference = if k % 2 == 0 {
            stable_reference()
        } else {
            unstable_reference()
        };
        let out = solve_sdp(&snap, &reference, &SynthesisOptions::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        let p = out.p.unwrap();
        assert!(ddmatch::linalg::min_sym_eigenvalue(&p) > 0.0);
        let x1qx = &snap.x1 * out.qx.unwrap();
        let pinv = p.clone().try_inverse().unwrap();
        let lyap = &x1qx * pinv * x1qx.transpose() - &p;
        assert!(ddmatch::linalg::max_sym_eigenvalue(&ddmatch::linalg::symmetrize(&lyap)) < 0.0);
        assert!(out.lmi_min_eigenvalue.unwrap() >= 1e-10 - 1e-12);
    }
}

#[test]
fn averaged_mode_with_one_experiment_builds_the_same_problem() {
    let snap = stable_snapshots(42, 30, 0.2);
    let avg = average_snapshots(std::slice::from_ref(&snap)).unwrap();
    let single = build_sdp_problem(
        &snap,
        &stable_reference(),
        &SynthesisOptions::with_mode(SynthesisMode::Sdp),
    )
    .unwrap();
    let averaged = build_sdp_problem(
        &avg,
        &stable_reference(),
        &SynthesisOptions::with_mode(SynthesisMode::AveragedSdp),
    )
    .unwrap();
    assert_eq!(
        export_problem(&single).unwrap(),
        export_problem(&averaged).unwrap()
    );
}

#[test]
fn sdp_export_block_structure() {
    let snap = stable_snapshots(42, 30, 0.0);
    let prob = build_sdp_problem(&snap, &stable_reference(), &SynthesisOptions::default()).unwrap();
    let text = export_problem(&prob).unwrap();
    let parsed = ddmatch::sdp::SdpaProblem::parse(&text).unwrap();
    assert!(parsed.block_struct.contains(&6));
    // Equality rows and the L1 epigraph rows come as diagonal blocks.
    assert!(parsed.block_struct.iter().filter(|&&b| b < 0).count() == 2);
    let fro = SynthesisOptions {
        norm: MatchNorm::Frobenius,
        ..SynthesisOptions::default()
    };
    let prob = build_sdp_problem(&snap, &stable_reference(), &fro).unwrap();
    let parsed = ddmatch::sdp::SdpaProblem::parse(&export_problem(&prob).unwrap()).unwrap();
    assert_eq!(parsed.block_struct.iter().filter(|&&b| b == 10).count(), 2);
}

#[test]
fn regularized_and_dc_penalized_variants() {
    let snap = unstable_snapshots(6, 30, 0.05);
    let reference = unstable_reference();
    let base = solve_sdp(&snap, &reference, &SynthesisOptions::default()).unwrap();
    let reg = solve_sdp(
        &snap,
        &reference,
        &SynthesisOptions {
            lambda1: 1.0,
            ..SynthesisOptions::default()
        },
    )
    .unwrap();
    let dc = solve_sdp(
        &snap,
        &reference,
        &SynthesisOptions {
            dc_gain_weight: 1.0,
            ..SynthesisOptions::default()
        },
    )
    .unwrap();
    for out in [&base, &reg, &dc] {
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!(out.gains.is_some());
    }
    // Every variant keeps the Lyapunov constraint, so the true loop is stable
    // whenever the data noise is small relative to the margin.
    for out in [&base, &reg, &dc] {
        let g = out.gains.as_ref().unwrap();
        let a_cl = unstable_plant().a() + unstable_plant().b() * &g.kx;
        assert!(spectral_radius(&a_cl).unwrap() < 1.0);
        let c = out.certificate_inputs.as_ref().unwrap();
        let m = ddmatch::cert::compute_alpha_beta(&c.x1, &c.qx, &c.p).unwrap();
        assert!(m.alpha > 0.0 && m.beta > 0.0);
    }
}

#[test]
fn noiseless_sdp_recovery_on_unstable_plant() {
    let snap = unstable_snapshots(12, 30, 0.0);
    let out = solve_sdp(&snap, &unstable_reference(), &SynthesisOptions::default()).unwrap();
    assert_eq!(out.status, SolveStatus::Optimal);
    let g = out.gains.unwrap();
    let kx_star = unstable_reference().a_m() - unstable_plant().a();
    assert!(spectral_norm(&(&g.kx - kx_star)) <= 1e-4);
    assert!(spectral_norm(&(&g.kr - DMatrix::identity(3, 3) * 0.1)) <= 1e-4);
}
