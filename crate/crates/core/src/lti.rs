//! Discrete-time LTI plants, reference models and the static control law.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{ensure_finite, ensure_shape, ensure_square, spectral_radius};
use crate::scalar::Real;
use crate::serde_matrix;

/// Reference models must satisfy `spectral_radius(A_M) < 1 - REFERENCE_STABILITY_TOL`.
pub const REFERENCE_STABILITY_TOL: f64 = 1e-9;

/// Plant `x(t+1) = A x(t) + B u(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr<T>", bound = "T: Real")]
pub struct StateSpaceModel<T: Real> {
    #[serde(with = "serde_matrix")]
    a: DMatrix<T>,
    #[serde(with = "serde_matrix")]
    b: DMatrix<T>,
}

#[derive(Deserialize)]
#[serde(bound = "T: Real")]
struct ModelRepr<T: Real> {
    #[serde(with = "serde_matrix")]
    a: DMatrix<T>,
    #[serde(with = "serde_matrix")]
    b: DMatrix<T>,
}

impl<T: Real> TryFrom<ModelRepr<T>> for StateSpaceModel<T> {
    type Error = Error;
    fn try_from(r: ModelRepr<T>) -> Result<Self> {
        Self::new(r.a, r.b)
    }
}

impl<T: Real> StateSpaceModel<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>) -> Result<Self> {
        ensure_square(&a, "plant A")?;
        if b.nrows() != a.nrows() {
            return Err(dim_err("plant B rows", a.nrows(), b.nrows()));
        }
        ensure_finite(&a, "plant A")?;
        ensure_finite(&b, "plant B")?;
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `A + B K_x`.
    pub fn closed_loop_matrix(&self, gains: &ControllerGains<T>) -> Result<DMatrix<T>> {
        gains.check_dims(self.m(), self.n())?;
        Ok(&self.a + &self.b * &gains.kx)
    }
}

/// Target closed-loop behaviour `x_d(t+1) = A_M x_d(t) + B_M r(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ReferenceRepr<T>", bound = "T: Real")]
pub struct ReferenceModel<T: Real> {
    #[serde(with = "serde_matrix")]
    a_m: DMatrix<T>,
    #[serde(with = "serde_matrix")]
    b_m: DMatrix<T>,
}

#[derive(Deserialize)]
#[serde(bound = "T: Real")]
struct ReferenceRepr<T: Real> {
    #[serde(with = "serde_matrix")]
    a_m: DMatrix<T>,
    #[serde(with = "serde_matrix")]
    b_m: DMatrix<T>,
}

impl<T: Real> TryFrom<ReferenceRepr<T>> for ReferenceModel<T> {
    type Error = Error;
    fn try_from(r: ReferenceRepr<T>) -> Result<Self> {
        Self::new(r.a_m, r.b_m)
    }
}

impl<T: Real> ReferenceModel<T> {
    /// Rejects models whose spectral radius is not below `1 - 1e-9`.
    pub fn new(a_m: DMatrix<T>, b_m: DMatrix<T>) -> Result<Self> {
        ensure_square(&a_m, "reference A_M")?;
        let n = a_m.nrows();
        ensure_shape(&b_m, n, n, "reference B_M")?;
        ensure_finite(&a_m, "reference A_M")?;
        ensure_finite(&b_m, "reference B_M")?;
        let radius = spectral_radius(&a_m)?;
        if radius >= T::one() - T::lit(REFERENCE_STABILITY_TOL) {
            return Err(Error::UnstableReference {
                radius: radius.to_f64_lossy(),
            });
        }
        Ok(Self { a_m, b_m })
    }

    /// `A_M = a I_n`, `B_M = b I_n`.
    pub fn scaled_identity(n: usize, a: T, b: T) -> Result<Self> {
        Self::new(DMatrix::identity(n, n) * a, DMatrix::identity(n, n) * b)
    }

    pub fn a_m(&self) -> &DMatrix<T> {
        &self.a_m
    }

    pub fn b_m(&self) -> &DMatrix<T> {
        &self.b_m
    }

    pub fn n(&self) -> usize {
        self.a_m.nrows()
    }

    pub fn dc_gain(&self) -> Result<DMatrix<T>> {
        dc_gain(&self.a_m, &self.b_m)
    }
}

/// Static law `u = K_x x + K_r r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ControllerGains<T: Real> {
    #[serde(with = "serde_matrix")]
    pub kx: DMatrix<T>,
    #[serde(with = "serde_matrix")]
    pub kr: DMatrix<T>,
}

impl<T: Real> ControllerGains<T> {
    pub fn new(kx: DMatrix<T>, kr: DMatrix<T>) -> Result<Self> {
        if kx.shape() != kr.shape() {
            return Err(dim_err(
                "controller gains",
                format!("{}x{}", kx.nrows(), kx.ncols()),
                format!("{}x{}", kr.nrows(), kr.ncols()),
            ));
        }
        ensure_finite(&kx, "K_x")?;
        ensure_finite(&kr, "K_r")?;
        Ok(Self { kx, kr })
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            kx: DMatrix::zeros(m, n),
            kr: DMatrix::zeros(m, n),
        }
    }

    pub(crate) fn check_dims(&self, m: usize, n: usize) -> Result<()> {
        ensure_shape(&self.kx, m, n, "K_x")?;
        ensure_shape(&self.kr, m, n, "K_r")
    }

    pub fn control(&self, x: &DVector<T>, r: &DVector<T>) -> DVector<T> {
        &self.kx * x + &self.kr * r
    }
}

/// i.i.d. Gaussian measurement noise `v ~ N(0, sigma^2 I)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NoiseSpec<T: Real> {
    pub sigma: T,
    pub seed: u64,
}

impl<T: Real> NoiseSpec<T> {
    pub fn new(sigma: T, seed: u64) -> Result<Self> {
        if !(sigma >= T::zero()) || !sigma.is_finite_value() {
            return Err(Error::InvalidParameter(format!(
                "noise sigma must be finite and nonnegative, got {sigma}"
            )));
        }
        Ok(Self { sigma, seed })
    }

    pub fn noiseless() -> Self {
        Self {
            sigma: T::zero(),
            seed: 0,
        }
    }

    /// Draws an `n x len` matrix of noise samples, time along columns.
    ///
    /// Samples are produced column by column from a ChaCha8 stream seeded
    /// with `seed`, so the same noise description always yields the same sequence.
    pub fn sample(&self, n: usize, len: usize) -> DMatrix<T> {
        if self.sigma == T::zero() {
            return DMatrix::zeros(n, len);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let sigma = self.sigma.to_f64_lossy();
        let mut out = DMatrix::zeros(n, len);
        for t in 0..len {
            for j in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                out[(j, t)] = T::lit(sigma * z);
            }
        }
        out
    }
}

/// One experiment: inputs `u(0..T-1)` and states `x(0..T)`, time along columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ExperimentRecord<T: Real> {
    #[serde(with = "serde_matrix")]
    pub inputs: DMatrix<T>,
    #[serde(with = "serde_matrix")]
    pub states_measured: DMatrix<T>,
    #[serde(with = "serde_matrix::option", default)]
    pub states_clean: Option<DMatrix<T>>,
    #[serde(with = "serde_matrix::option", default)]
    pub noise: Option<DMatrix<T>>,
    #[serde(with = "serde_matrix::option", default)]
    pub references: Option<DMatrix<T>>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl<T: Real> ExperimentRecord<T> {
    /// Measurement-only record (no oracle data).
    pub fn from_measurements(inputs: DMatrix<T>, states: DMatrix<T>) -> Result<Self> {
        let rec = Self {
            inputs,
            states_measured: states,
            states_clean: None,
            noise: None,
            references: None,
            seed: None,
        };
        rec.validate()?;
        Ok(rec)
    }

    /// Experiment length `T` (number of input samples).
    pub fn horizon(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn n(&self) -> usize {
        self.states_measured.nrows()
    }

    pub fn m(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn has_oracle(&self) -> bool {
        self.states_clean.is_some() && self.noise.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.horizon();
        let n = self.n();
        if self.states_measured.ncols() != t + 1 {
            return Err(dim_err(
                "record state length",
                t + 1,
                self.states_measured.ncols(),
            ));
        }
        for (name, blk) in [("clean states", &self.states_clean), ("noise", &self.noise)] {
            if let Some(m) = blk {
                ensure_shape(m, n, t + 1, name)?;
            }
        }
        if let Some(r) = &self.references {
            if r.ncols() != t {
                return Err(dim_err("record reference length", t, r.ncols()));
            }
        }
        Ok(())
    }

    /// Subtract the per-channel empirical mean from the measured states.
    pub fn detrended(&self) -> Self {
        let mut out = self.clone();
        let len = T::from_count(self.states_measured.ncols().max(1));
        for j in 0..self.n() {
            let mean = self.states_measured.row(j).sum() / len;
            for v in out.states_measured.row_mut(j).iter_mut() {
                *v -= mean;
            }
        }
        out
    }

    /// Copy with oracle fields removed, as exported without `--oracle`.
    pub fn without_oracle(&self) -> Self {
        Self {
            states_clean: None,
            noise: None,
            ..self.clone()
        }
    }
}

fn check_x0<T: Real>(x0: &DVector<T>, n: usize) -> Result<()> {
    if x0.len() != n {
        return Err(dim_err("initial state", n, x0.len()));
    }
    Ok(())
}

/// Simulate the plant under an open-loop input sequence (`m x T`).
pub fn simulate_open_loop<T: Real>(
    model: &StateSpaceModel<T>,
    inputs: &DMatrix<T>,
    x0: &DVector<T>,
    noise: &NoiseSpec<T>,
) -> Result<ExperimentRecord<T>> {
    let (n, m) = (model.n(), model.m());
    let t_len = inputs.ncols();
    if t_len == 0 {
        return Err(Error::Empty("input sequence".into()));
    }
    if inputs.nrows() != m {
        return Err(dim_err("input channels", m, inputs.nrows()));
    }
    check_x0(x0, n)?;

    let mut clean = DMatrix::zeros(n, t_len + 1);
    clean.set_column(0, x0);
    for t in 0..t_len {
        let next = model.a() * clean.column(t) + model.b() * inputs.column(t);
        clean.set_column(t + 1, &next);
    }
    let v = noise.sample(n, t_len + 1);
    Ok(ExperimentRecord {
        inputs: inputs.clone(),
        states_measured: &clean + &v,
        states_clean: Some(clean),
        noise: Some(v),
        references: None,
        seed: Some(noise.seed),
    })
}

/// Simulate the plant in feedback with `u = K_x x + K_r r`, where `x` is the
/// noisy measurement, so noise enters the loop through `B K_x`.
pub fn simulate_closed_loop<T: Real>(
    model: &StateSpaceModel<T>,
    gains: &ControllerGains<T>,
    refs: &DMatrix<T>,
    x0: &DVector<T>,
    noise: &NoiseSpec<T>,
) -> Result<ExperimentRecord<T>> {
    let (n, m) = (model.n(), model.m());
    gains.check_dims(m, n)?;
    let t_len = refs.ncols();
    if t_len == 0 {
        return Err(Error::Empty("reference sequence".into()));
    }
    if refs.nrows() != n {
        return Err(dim_err("reference channels", n, refs.nrows()));
    }
    check_x0(x0, n)?;

    let v = noise.sample(n, t_len + 1);
    let mut clean = DMatrix::zeros(n, t_len + 1);
    let mut inputs = DMatrix::zeros(m, t_len);
    clean.set_column(0, x0);
    for t in 0..t_len {
        let measured = clean.column(t) + v.column(t);
        let u = &gains.kx * measured + &gains.kr * refs.column(t);
        let next = model.a() * clean.column(t) + model.b() * &u;
        inputs.set_column(t, &u);
        clean.set_column(t + 1, &next);
    }
    Ok(ExperimentRecord {
        inputs,
        states_measured: &clean + &v,
        states_clean: Some(clean),
        noise: Some(v),
        references: Some(refs.clone()),
        seed: Some(noise.seed),
    })
}

/// Iterate the reference model; returns `n x (T+1)` states.
pub fn reference_response<T: Real>(
    reference: &ReferenceModel<T>,
    refs: &DMatrix<T>,
    xd0: &DVector<T>,
) -> Result<DMatrix<T>> {
    let n = reference.n();
    if refs.nrows() != n {
        return Err(dim_err("reference channels", n, refs.nrows()));
    }
    check_x0(xd0, n)?;
    let t_len = refs.ncols();
    let mut xd = DMatrix::zeros(n, t_len + 1);
    xd.set_column(0, xd0);
    for t in 0..t_len {
        let next = reference.a_m() * xd.column(t) + reference.b_m() * refs.column(t);
        xd.set_column(t + 1, &next);
    }
    Ok(xd)
}

/// Steady-state gain `(I - A)^{-1} B`.
pub fn dc_gain<T: Real>(a: &DMatrix<T>, bmap: &DMatrix<T>) -> Result<DMatrix<T>> {
    ensure_square(a, "DC gain A")?;
    let n = a.nrows();
    if bmap.nrows() != n {
        return Err(dim_err("DC gain input map rows", n, bmap.nrows()));
    }
    let i_minus_a = DMatrix::<T>::identity(n, n) - a;
    let lu = i_minus_a.lu();
    lu.solve(bmap)
        .filter(|x| x.iter().all(|v| v.is_finite_value()))
        .ok_or_else(|| Error::Singular("I - A is not invertible".into()))
}
