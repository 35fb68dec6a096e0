mod common;

use common::*;
use ddmatch::data::{
    average_snapshots, build_snapshots, check_persistent_excitation, check_rank_condition,
    SnapshotMatrices, DEFAULT_RANK_TOL,
};
use ddmatch::lti::{simulate_open_loop, ExperimentRecord, NoiseSpec};
use nalgebra::{dmatrix, DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn slicing_example() {
    let rec =
        ExperimentRecord::from_measurements(dmatrix![1.0, 2.0], dmatrix![0.0, 1.0, 3.0]).unwrap();
    let s = build_snapshots(&rec).unwrap();
    assert_eq!(s.u0, dmatrix![1.0, 2.0]);
    assert_eq!(s.x0, dmatrix![0.0, 1.0]);
    assert_eq!(s.x1, dmatrix![1.0, 3.0]);
}

#[test]
fn noiseless_record_has_zero_noise_blocks() {
    let s = stable_snapshots(1, 30, 0.0);
    assert_eq!(s.v0.as_ref().unwrap(), &DMatrix::zeros(3, 30));
    assert_eq!(s.v1.as_ref().unwrap(), &DMatrix::zeros(3, 30));
    assert_eq!(s.x0_clean.as_ref().unwrap(), &s.x0);
    for b in [&s.u0, &s.x0, &s.x1] {
        assert_eq!(b.ncols(), 30);
    }
}

#[test]
fn rank_examples() {
    let s = SnapshotMatrices::new(
        DMatrix::<f64>::identity(2, 2),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
    )
    .unwrap();
    let r = check_rank_condition(&s, DEFAULT_RANK_TOL);
    assert_eq!(r.required, 4);
    assert!(r.stacked_rank <= 2 && !r.satisfied);

    let s = stable_snapshots(5, 30, 0.0);
    assert!(check_rank_condition(&s, DEFAULT_RANK_TOL).satisfied);

    let mut z = s.clone();
    z.x0.row_mut(1).fill(0.0);
    assert!(!check_rank_condition(&z, DEFAULT_RANK_TOL).satisfied);
}

#[test]
fn persistent_excitation_examples() {
    let constant = DMatrix::from_element(1, 10, 1.5);
    assert!(!check_persistent_excitation(&constant, 2, DEFAULT_RANK_TOL).unwrap());
    assert!(
        !check_persistent_excitation(&DMatrix::<f64>::zeros(2, 10), 3, DEFAULT_RANK_TOL).unwrap()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let u = uniform(&mut rng, 3, 30, -2.0, 2.0);
        assert!(check_persistent_excitation(&u, 4, DEFAULT_RANK_TOL).unwrap());
    }
    assert!(check_persistent_excitation(&constant, 11, DEFAULT_RANK_TOL).is_err());
    assert!(check_persistent_excitation(&constant, 0, DEFAULT_RANK_TOL).is_err());
}

#[test]
fn averaging_examples() {
    let s = stable_snapshots(2, 30, 0.3);
    let avg = average_snapshots(&[s.clone(), s.clone(), s.clone()]).unwrap();
    assert!((avg.x0 - &s.x0).amax() < 1e-14);
    let a = SnapshotMatrices::new(dmatrix![2.0], dmatrix![2.0], dmatrix![2.0]).unwrap();
    let b = SnapshotMatrices::new(dmatrix![4.0], dmatrix![4.0], dmatrix![4.0]).unwrap();
    let avg = average_snapshots(&[a.clone(), b]).unwrap();
    assert_eq!(avg.u0, dmatrix![3.0]);
    assert!(average_snapshots::<f64>(&[]).is_err());
    let wide =
        SnapshotMatrices::new(dmatrix![1.0, 1.0], dmatrix![1.0, 1.0], dmatrix![1.0, 1.0]).unwrap();
    assert!(average_snapshots(&[a.clone(), wide]).is_err());
    // Optional blocks survive only when every member carries them.
    let with_noise = stable_snapshots(3, 30, 0.1);
    let avg = average_snapshots(&[with_noise.clone(), with_noise.without_oracle()]).unwrap();
    assert!(avg.v0.is_none());
    assert_eq!(
        average_snapshots(std::slice::from_ref(&with_noise)).unwrap(),
        with_noise
    );
}

#[test]
fn averaged_noise_shrinks_like_inverse_sqrt() {
    // Repeated experiments: same input and initial state, fresh noise.
    let plant = stable_plant();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let u = uniform(&mut rng, 3, 30, -2.0, 2.0);
    let sigma = 0.5;
    let rms = |n_exp: usize, base: u64| {
        let snaps: Vec<_> = (0..n_exp)
            .map(|k| {
                let noise = NoiseSpec::new(sigma, base + k as u64).unwrap();
                build_snapshots(
                    &simulate_open_loop(&plant, &u, &DVector::zeros(3), &noise).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let v0 = average_snapshots(&snaps).unwrap().v0.unwrap();
        (v0.norm_squared() / v0.len() as f64).sqrt()
    };
    for n_exp in [1usize, 16, 100] {
        let observed = rms(n_exp, 1000 * n_exp as u64);
        let expected = sigma / (n_exp as f64).sqrt();
        // 90 samples of a chi-square: relative spread of the RMS is about 1/sqrt(180).
        let band = 3.0 * expected / (180f64).sqrt();
        assert!(
            (observed - expected).abs() <= band,
            "N={n_exp}: {observed} vs {expected}"
        );
    }
}

#[test]
fn rank_condition_on_random_controllable_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut trials = 0;
    while trials < 60 {
        let n = rng.random_range(1..=4usize);
        let m = rng.random_range(1..=3usize);
        let plant = random_plant(&mut rng, n, m, 1.2);
        if !controllable(plant.a(), plant.b()) {
            continue;
        }
        let t = (m + 1) * (n + 1) + n + 6;
        let u = uniform(&mut rng, m, t, -1.0, 1.0);
        assert!(check_persistent_excitation(&u, n + 1, DEFAULT_RANK_TOL).unwrap());
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let rec = simulate_open_loop(&plant, &u, &x0, &NoiseSpec::noiseless()).unwrap();
        let report = check_rank_condition(&build_snapshots(&rec).unwrap(), DEFAULT_RANK_TOL);
        assert!(report.satisfied, "n={n} m={m}: {report:?}");
        trials += 1;
    }
}

fn controllable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let m = b.ncols();
    let mut c = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for k in 0..n {
        c.columns_mut(k * m, m).copy_from(&blk);
        blk = a * blk;
    }
    let sv = ddmatch::linalg::singular_values(&c);
    sv[n - 1] > 1e-6 * sv[0]
}

fn snapshots_from(seed: u64, sigma: f64) -> SnapshotMatrices<f64> {
    stable_snapshots(seed, 12, sigma)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shift_consistency(seed in any::<u64>(), sigma in 0.0..1.0f64) {
        let s = snapshots_from(seed, sigma);
        for t in 0..s.horizon() - 1 {
            prop_assert_eq!(s.x1.column(t), s.x0.column(t + 1));
        }
    }

    #[test]
    fn averaging_commutes_with_scaling(seeds in prop::collection::vec(any::<u64>(), 1..6), c in -3.0..3.0f64) {
        let list: Vec<_> = seeds.iter().map(|&s| snapshots_from(s, 0.2)).collect();
        let scaled: Vec<_> = list.iter().map(|s| {
            let mut s = s.clone();
            for b in [&mut s.u0, &mut s.x0, &mut s.x1] { *b *= c; }
            s
        }).collect();
        let a = average_snapshots(&scaled).unwrap();
        let b = average_snapshots(&list).unwrap();
        for (x, y) in [(&a.u0, &b.u0), (&a.x0, &b.x0), (&a.x1, &b.x1)] {
            prop_assert!((x - y * c).amax() <= 1e-12 * (1.0 + y.amax() * c.abs()));
        }
    }

    #[test]
    fn rank_never_exceeds_bounds(rows in 1..5usize, m in 1..3usize, t in 1..12usize, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = SnapshotMatrices::new(
            uniform(&mut rng, m, t, -1.0, 1.0),
            uniform(&mut rng, rows, t, -1.0, 1.0),
            uniform(&mut rng, rows, t, -1.0, 1.0),
        ).unwrap();
        let r = check_rank_condition(&s, DEFAULT_RANK_TOL);
        prop_assert!(r.stacked_rank <= (rows + m).min(t));
        prop_assert_eq!(r.satisfied, r.stacked_rank == r.required);
    }
}
