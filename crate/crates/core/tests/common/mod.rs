#![allow(dead_code)]

use ddmatch::data::{build_snapshots, SnapshotMatrices};
use ddmatch::lti::{
    simulate_closed_loop, simulate_open_loop, ControllerGains, NoiseSpec, ReferenceModel,
    StateSpaceModel,
};
use nalgebra::{dmatrix, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn stable_plant() -> StateSpaceModel<f64> {
    StateSpaceModel::new(
        dmatrix![
            0.1344, 0.2155, -0.1084;
            0.4585, 0.0797, 0.0857;
            -0.5647, -0.3269, 0.8946
        ],
        dmatrix![
            0.9298, 0.9143, -0.7162;
            -0.6848, -0.0292, -0.1565;
            0.9412, 0.6006, 0.8315
        ],
    )
    .unwrap()
}

pub fn stable_reference() -> ReferenceModel<f64> {
    ReferenceModel::scaled_identity(3, 0.2, 0.8).unwrap()
}

/// Gains as printed to four decimals.
pub fn stable_printed_gains() -> ControllerGains<f64> {
    ControllerGains::new(
        dmatrix![
            0.6308, -0.2920, 0.3080;
            -0.3814, 0.4011, -0.7166;
            0.2405, 0.4340, -0.6664
        ],
        dmatrix![
            0.0768, -1.3126, -0.1809;
            0.4654, 1.5957, 0.7012;
            -0.4231, 0.3332, 0.6604
        ],
    )
    .unwrap()
}

/// Gains recomputed from the plant: `K_x = B^{-1}(A_M - A)`, `K_r = B^{-1} B_M`.
pub fn stable_true_gains() -> ControllerGains<f64> {
    let p = stable_plant();
    let r = stable_reference();
    let binv = p.b().clone().try_inverse().unwrap();
    ControllerGains::new(&binv * (r.a_m() - p.a()), &binv * r.b_m()).unwrap()
}

pub fn unstable_plant() -> StateSpaceModel<f64> {
    StateSpaceModel::new(
        dmatrix![1.01, 0.01, 0.0; 0.01, 1.01, 0.01; 0.0, 0.01, 1.01],
        DMatrix::identity(3, 3),
    )
    .unwrap()
}

pub fn unstable_reference() -> ReferenceModel<f64> {
    ReferenceModel::scaled_identity(3, 0.9, 0.1).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn stable_snapshots(seed: u64, t: usize, sigma: f64) -> SnapshotMatrices<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = uniform(&mut rng, 3, t, -2.0, 2.0);
    let noise = NoiseSpec::new(sigma, seed ^ 0x5eed).unwrap();
    let rec = simulate_open_loop(&stable_plant(), &u, &DVector::zeros(3), &noise).unwrap();
    build_snapshots(&rec).unwrap()
}

pub fn unstable_snapshots(seed: u64, t: usize, sigma: f64) -> SnapshotMatrices<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs = uniform(&mut rng, 3, t, -5.0, 10.0);
    let pre = ControllerGains::new(-DMatrix::identity(3, 3), DMatrix::identity(3, 3)).unwrap();
    let noise = NoiseSpec::new(sigma, seed ^ 0x5eed).unwrap();
    let rec =
        simulate_closed_loop(&unstable_plant(), &pre, &refs, &DVector::zeros(3), &noise).unwrap();
    build_snapshots(&rec).unwrap()
}

/// Random plant with spectral radius below `radius` and a well-conditioned input matrix.
pub fn random_plant(rng: &mut ChaCha8Rng, n: usize, m: usize, radius: f64) -> StateSpaceModel<f64> {
    loop {
        let a = uniform(rng, n, n, -1.0, 1.0);
        let rho = ddmatch::linalg::spectral_radius(&a).unwrap();
        if rho < 1e-3 {
            continue;
        }
        let a = a * (rng.random_range(0.2..radius) / rho);
        let b = uniform(rng, n, m, -1.0, 1.0);
        let sv = ddmatch::linalg::singular_values(&b);
        if sv[sv.len() - 1] < 0.2 {
            continue;
        }
        return StateSpaceModel::new(a, b).unwrap();
    }
}
