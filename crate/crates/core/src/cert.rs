//! Stability certificates for gains designed from noisy (averaged) data.
//!
//! Noise-to-signal multipliers `gamma1`, `gamma2` bound the noise blocks by the
//! data blocks in the PSD order; `alpha`, `beta` measure the Lyapunov margin of
//! a solution `(Qx, P)`. The gains are certified stabilizing when
//! `(6 gamma1 + 3 gamma2) / (1 - 2 gamma1) < alpha^2 / (2 beta (2 beta + alpha))`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::SnapshotMatrices;
use crate::error::{dim_err, Error, Result};
use crate::linalg::{
    max_sym_eigenvalue, min_sym_eigenvalue, psd_multiplier, spd_solve, symmetrize,
};
use crate::scalar::Real;
use crate::serde_matrix;

/// Relative threshold for range tests in the multiplier computations.
pub const MULTIPLIER_REL_TOL: f64 = 1e-10;

/// Floor applied to `beta` when `Qx P^{-1} Qx'` vanishes.
pub const BETA_FLOOR: f64 = 1e-12;

/// Strictness threshold of [`check_lyapunov`].
pub const LYAPUNOV_STRICTNESS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NoiseEnergyReport<T: Real> {
    /// Smallest `g` with `[0; V0][0; V0]' <= g [U0; X0][U0; X0]'`.
    /// `None` when the noise leaves the range of the data.
    pub gamma1: Option<T>,
    /// Smallest `g` with `V1 V1' <= g X1 X1'`.
    pub gamma2: Option<T>,
    /// `gamma1 < 0.5` (zero accepted as the noiseless limit).
    pub gamma1_ok: bool,
    pub both_hold: bool,
    pub averaged: bool,
}

/// Noise energy multipliers from oracle noise blocks.
pub fn check_noise_energy<T: Real>(
    snap: &SnapshotMatrices<T>,
    averaged: bool,
) -> Result<NoiseEnergyReport<T>> {
    snap.validate()?;
    let (Some(v0), Some(v1)) = (&snap.v0, &snap.v1) else {
        return Err(Error::MissingOracle(
            "noise energy check needs the V0 and V1 blocks".into(),
        ));
    };
    let (n, m, tt) = (snap.n(), snap.m(), snap.horizon());
    let mut padded = DMatrix::zeros(m + n, tt);
    padded.rows_mut(m, n).copy_from(v0);
    let data = snap.stacked();
    let tol = T::lit(MULTIPLIER_REL_TOL);
    let gamma1 = psd_multiplier(
        &(&padded * padded.transpose()),
        &(&data * data.transpose()),
        tol,
    );
    let gamma2 = psd_multiplier(
        &(v1 * v1.transpose()),
        &(&snap.x1 * snap.x1.transpose()),
        tol,
    );
    let gamma1_ok = gamma1.is_some_and(|g| g >= T::zero() && g < T::lit(0.5));
    Ok(NoiseEnergyReport {
        gamma1,
        gamma2,
        gamma1_ok,
        both_hold: gamma1_ok && gamma2.is_some(),
        averaged,
    })
}

/// Solution-dependent constants of the certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LyapunovMargins<T: Real> {
    /// Largest `a` with `Xi + a X1 X1' <= 0`.
    pub alpha: T,
    /// Largest eigenvalue of `M`, floored at [`BETA_FLOOR`].
    pub beta: T,
    /// `Xi = X1 M X1' - P`.
    #[serde(with = "serde_matrix")]
    pub xi: DMatrix<T>,
    /// `M = Qx P^{-1} Qx'`.
    #[serde(with = "serde_matrix")]
    pub m: DMatrix<T>,
}

pub fn compute_alpha_beta<T: Real>(
    x1: &DMatrix<T>,
    qx: &DMatrix<T>,
    p: &DMatrix<T>,
) -> Result<LyapunovMargins<T>> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::NotSquare("P".into()));
    }
    if x1.nrows() != n {
        return Err(dim_err("X1 rows", n, x1.nrows()));
    }
    if qx.shape() != (x1.ncols(), n) {
        return Err(dim_err(
            "Qx",
            format!("{}x{}", x1.ncols(), n),
            format!("{}x{}", qx.nrows(), qx.ncols()),
        ));
    }
    let p = symmetrize(p);
    let m = symmetrize(&(qx * spd_solve(&p, &qx.transpose())?));
    let beta = max_sym_eigenvalue(&m).max(T::lit(BETA_FLOOR));
    let xi = symmetrize(&(x1 * &m * x1.transpose() - &p));
    let xi_max = max_sym_eigenvalue(&xi);
    if !(xi_max < T::zero()) {
        return Err(Error::NoCertificate(format!(
            "Xi is not negative definite (largest eigenvalue {xi_max:e})"
        )));
    }
    let energy = x1 * x1.transpose();
    let ratio = psd_multiplier(&energy, &(-&xi), T::lit(MULTIPLIER_REL_TOL))
        .ok_or_else(|| Error::NoCertificate("X1 X1' not dominated by -Xi".into()))?;
    if !(ratio > T::zero()) {
        return Err(Error::NoCertificate("X1 carries no energy".into()));
    }
    Ok(LyapunovMargins {
        alpha: T::one() / ratio,
        beta,
        xi,
        m,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct StabilityCertificate<T: Real> {
    pub gamma1: Option<T>,
    pub gamma2: Option<T>,
    pub alpha: T,
    pub beta: T,
    #[serde(with = "serde_matrix")]
    pub xi: DMatrix<T>,
    #[serde(with = "serde_matrix")]
    pub m: DMatrix<T>,
    /// `(6 gamma1 + 3 gamma2) / (1 - 2 gamma1)`; absent when undefined.
    pub lhs: Option<T>,
    /// `alpha^2 / (2 beta (2 beta + alpha))`.
    pub rhs: T,
    pub certified: bool,
    pub reason: Option<String>,
}

/// `(6 g1 + 3 g2) / (1 - 2 g1)`, defined for `g1 < 0.5`.
pub fn certificate_lhs<T: Real>(gamma1: T, gamma2: T) -> Option<T> {
    (gamma1 < T::lit(0.5))
        .then(|| (T::lit(6.0) * gamma1 + T::lit(3.0) * gamma2) / (T::one() - T::lit(2.0) * gamma1))
}

/// `alpha^2 / (2 beta (2 beta + alpha))`.
pub fn certificate_rhs<T: Real>(alpha: T, beta: T) -> T {
    alpha * alpha / (T::lit(2.0) * beta * (T::lit(2.0) * beta + alpha))
}

/// Combine the noise multipliers with the Lyapunov margins.
pub fn noise_robust_certificate<T: Real>(
    report: &NoiseEnergyReport<T>,
    margins: &LyapunovMargins<T>,
) -> StabilityCertificate<T> {
    let rhs = certificate_rhs(margins.alpha, margins.beta);
    let (lhs, reason) = match (report.gamma1, report.gamma2) {
        (Some(g1), Some(g2)) if g1 < T::lit(0.5) => (certificate_lhs(g1, g2), None),
        (Some(g1), Some(_)) => (
            None,
            Some(format!(
                "noise energy assumption violated: gamma1 = {g1:e} >= 0.5"
            )),
        ),
        _ => (
            None,
            Some("noise is not dominated by the data (no finite multiplier)".to_string()),
        ),
    };
    let certified = lhs.is_some_and(|l| l < rhs) && margins.alpha > T::zero();
    let reason = reason.or_else(|| {
        (!certified).then(|| "noise energy bound exceeds the Lyapunov margin".to_string())
    });
    StabilityCertificate {
        gamma1: report.gamma1,
        gamma2: report.gamma2,
        alpha: margins.alpha,
        beta: margins.beta,
        xi: margins.xi.clone(),
        m: margins.m.clone(),
        lhs,
        rhs,
        certified,
        reason,
    }
}

/// The Lyapunov LMI `[[P, X1 Qx], [(X1 Qx)', P]]`.
pub fn lyapunov_lmi<T: Real>(
    x1: &DMatrix<T>,
    qx: &DMatrix<T>,
    p: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::NotSquare("P".into()));
    }
    if x1.nrows() != n || qx.nrows() != x1.ncols() || qx.ncols() != n {
        return Err(dim_err(
            "Lyapunov LMI operands",
            format!("X1 {n}xT, Qx Tx{n}"),
            format!(
                "X1 {}x{}, Qx {}x{}",
                x1.nrows(),
                x1.ncols(),
                qx.nrows(),
                qx.ncols()
            ),
        ));
    }
    let x1qx = x1 * qx;
    let mut lmi = DMatrix::zeros(2 * n, 2 * n);
    lmi.view_mut((0, 0), (n, n)).copy_from(p);
    lmi.view_mut((n, n), (n, n)).copy_from(p);
    lmi.view_mut((0, n), (n, n)).copy_from(&x1qx);
    lmi.view_mut((n, 0), (n, n)).copy_from(&x1qx.transpose());
    Ok(symmetrize(&lmi))
}

/// LMI verdict: smallest eigenvalue of [`lyapunov_lmi`] strictly above `margin`.
pub fn lmi_holds<T: Real>(
    x1: &DMatrix<T>,
    qx: &DMatrix<T>,
    p: &DMatrix<T>,
    margin: T,
) -> Result<bool> {
    Ok(min_sym_eigenvalue(&lyapunov_lmi(x1, qx, p)?) > margin)
}

/// Direct verdict: `P > 0` and `X1 Qx P^{-1} (X1 Qx)' - P < 0`.
pub fn lyapunov_inequality_holds<T: Real>(
    x1: &DMatrix<T>,
    qx: &DMatrix<T>,
    p: &DMatrix<T>,
) -> Result<bool> {
    lyapunov_lmi(x1, qx, p)?;
    let p = symmetrize(p);
    if !(min_sym_eigenvalue(&p) > T::zero()) {
        return Ok(false);
    }
    let x1qx = x1 * qx;
    let Ok(sol) = spd_solve(&p, &x1qx.transpose()) else {
        return Ok(false);
    };
    let lhs = symmetrize(&(&x1qx * sol - &p));
    Ok(max_sym_eigenvalue(&lhs) < T::zero())
}

/// High-probability bound on the spectral norm of an `n x T` average of `N`
/// i.i.d. `N(0, sigma^2)` noise matrices, and its confidence level.
pub fn gaussian_average_bound(sigma: f64, t: usize, n_exp: usize, n: usize, mu: f64) -> (f64, f64) {
    let (t, n_exp, n) = (t as f64, n_exp as f64, n as f64);
    let bound = sigma * (t / n_exp).sqrt() * (1.0 + mu + (n / t).sqrt());
    let confidence = 1.0 - (-t * mu * mu / 2.0).exp();
    (bound, confidence)
}

/// Strict discrete Lyapunov inequality `A P A' - P < 0`.
pub fn check_lyapunov<T: Real>(a_cl: &DMatrix<T>, p: &DMatrix<T>) -> Result<bool> {
    let n = a_cl.nrows();
    if a_cl.ncols() != n {
        return Err(Error::NotSquare("closed-loop matrix".into()));
    }
    if p.shape() != (n, n) {
        return Err(dim_err(
            "P",
            format!("{n}x{n}"),
            format!("{}x{}", p.nrows(), p.ncols()),
        ));
    }
    let lhs = symmetrize(&(a_cl * p * a_cl.transpose() - p));
    Ok(max_sym_eigenvalue(&lhs) < -T::lit(LYAPUNOV_STRICTNESS))
}
