mod common;

use common::*;
use ddmatch::linalg::spectral_radius;
use ddmatch::lti::{
    dc_gain, reference_response, simulate_closed_loop, simulate_open_loop, ControllerGains,
    NoiseSpec, ReferenceModel, StateSpaceModel,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn spectral_radius_examples() {
    let rho = spectral_radius(stable_plant().a()).unwrap();
    assert!((rho - 0.9536).abs() < 1e-3, "{rho}");
    assert!(spectral_radius(unstable_plant().a()).unwrap() > 1.0);
    assert!((spectral_radius(&DMatrix::<f64>::identity(3, 3)).unwrap() - 1.0).abs() < 1e-12);
    assert!(spectral_radius(&DMatrix::<f64>::zeros(2, 3)).is_err());
}

#[test]
fn reference_dc_gains_are_unitary() {
    for r in [stable_reference(), unstable_reference()] {
        let g = r.dc_gain().unwrap();
        assert!((g - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    }
    let g = dc_gain(&DMatrix::<f64>::zeros(2, 2), &DMatrix::identity(2, 2)).unwrap();
    assert_eq!(g, DMatrix::identity(2, 2));
    assert!(dc_gain(&DMatrix::<f64>::identity(2, 2), &DMatrix::identity(2, 2)).is_err());
}

#[test]
fn printed_gains_match_the_plants() {
    use ddmatch::synthesis::verify_matching;
    let (ra, rb) = verify_matching(
        &stable_plant(),
        &stable_printed_gains(),
        &stable_reference(),
    )
    .unwrap();
    assert!(ra <= 1e-3 && rb <= 1e-3, "{ra} {rb}");
    let (ra, rb) =
        verify_matching(&stable_plant(), &stable_true_gains(), &stable_reference()).unwrap();
    assert!(ra <= 1e-12 && rb <= 1e-12);
    let kx = unstable_reference().a_m() - unstable_plant().a();
    let g = ControllerGains::new(kx, DMatrix::identity(3, 3) * 0.1).unwrap();
    let (ra, rb) = verify_matching(&unstable_plant(), &g, &unstable_reference()).unwrap();
    assert_eq!((ra, rb), (0.0, 0.0));
    let (ra, _) = verify_matching(
        &stable_plant(),
        &ControllerGains::zeros(3, 3),
        &stable_reference(),
    )
    .unwrap();
    let direct = ddmatch::linalg::spectral_norm(&(stable_plant().a() - stable_reference().a_m()));
    assert!((ra - direct).abs() < 1e-12 && ra > 0.0);
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, rows * cols)
        .prop_map(move |v| DMatrix::from_column_slice(rows, cols, &v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matched_closed_loop_follows_reference(
        seed in any::<u64>(),
        refs in matrix(3, 15),
        x0 in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plant = random_plant(&mut rng, 3, 3, 1.3);
        let reference = ReferenceModel::scaled_identity(3, 0.5, 0.5).unwrap();
        let binv = plant.b().clone().try_inverse().unwrap();
        let gains = ControllerGains::new(
            &binv * (reference.a_m() - plant.a()),
            &binv * reference.b_m(),
        ).unwrap();
        let x0 = DVector::from_vec(x0);
        let rec = simulate_closed_loop(&plant, &gains, &refs, &x0, &NoiseSpec::noiseless()).unwrap();
        let xd = reference_response(&reference, &refs, &x0).unwrap();
        prop_assert!((rec.states_measured - xd).amax() < 1e-10);
    }

    #[test]
    fn open_loop_superposition(seed in any::<u64>(), u1 in matrix(2, 12), u2 in matrix(2, 12)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plant = random_plant(&mut rng, 3, 2, 0.99);
        let z = DVector::zeros(3);
        let quiet = NoiseSpec::noiseless();
        let a = simulate_open_loop(&plant, &u1, &z, &quiet).unwrap();
        let b = simulate_open_loop(&plant, &u2, &z, &quiet).unwrap();
        let ab = simulate_open_loop(&plant, &(&u1 + &u2), &z, &quiet).unwrap();
        prop_assert!((ab.states_measured - a.states_measured - b.states_measured).amax() < 1e-12);
    }

    #[test]
    fn zero_gains_equal_zero_input(seed in any::<u64>(), refs in matrix(2, 10)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plant = random_plant(&mut rng, 2, 1, 0.99);
        let x0 = DVector::from_vec(vec![1.0, -0.5]);
        let cl = simulate_closed_loop(&plant, &ControllerGains::zeros(1, 2), &refs, &x0, &NoiseSpec::noiseless()).unwrap();
        let ol = simulate_open_loop(&plant, &DMatrix::zeros(1, 10), &x0, &NoiseSpec::noiseless()).unwrap();
        prop_assert_eq!(cl.states_measured, ol.states_measured);
    }

    #[test]
    fn stored_noise_is_the_measurement_error(seed in any::<u64>(), sigma in 0.0..2.0f64) {
        let plant = stable_plant();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = uniform(&mut rng, 3, 20, -2.0, 2.0);
        let rec = simulate_open_loop(&plant, &u, &DVector::zeros(3), &NoiseSpec::new(sigma, seed).unwrap()).unwrap();
        let clean = rec.states_clean.clone().unwrap();
        let v = rec.noise.clone().unwrap();
        prop_assert_eq!(&rec.states_measured, &(&clean + &v));
        let tol = 4.0 * f64::EPSILON * rec.states_measured.amax().max(1.0);
        prop_assert!((&rec.states_measured - &clean - &v).amax() <= tol);
        prop_assert_eq!(rec.seed, Some(seed));
    }
}

#[test]
fn reference_models_must_be_stable() {
    assert!(ReferenceModel::<f64>::scaled_identity(2, 1.0, 1.0).is_err());
    assert!(ReferenceModel::<f64>::scaled_identity(2, 0.999, 1.0).is_ok());
    let r = ReferenceModel::<f64>::scaled_identity(3, 0.9, 0.1).unwrap();
    assert!(spectral_radius(r.a_m()).unwrap() < 1.0);
    assert!(StateSpaceModel::<f64>::new(DMatrix::zeros(2, 2), DMatrix::zeros(3, 1)).is_err());
}

#[test]
fn json_round_trip_of_models() {
    let p = stable_plant();
    let text = serde_json::to_string(&p).unwrap();
    let back: StateSpaceModel<f64> = serde_json::from_str(&text).unwrap();
    assert_eq!(back, p);
    let bad = r#"{"a": [[1.0, 0.0]], "b": [[1.0]]}"#;
    assert!(serde_json::from_str::<StateSpaceModel<f64>>(bad).is_err());
}
