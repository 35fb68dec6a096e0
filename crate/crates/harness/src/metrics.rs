use ddmatch::linalg::{spectral_norm, spectral_radius};
use ddmatch::{ControllerGains, Error, Result, StateSpaceModel};
use nalgebra::DMatrix;

/// Closed loops with spectral radius at or above `1 - STABILITY_MARGIN`
/// count as unstable.
pub const STABILITY_MARGIN: f64 = 1e-9;

pub fn is_stable(rho: f64) -> bool {
    rho < 1.0 - STABILITY_MARGIN
}

/// Per-channel `10 log10(sum x^2 / sum v^2)` in dB, channels along rows.
///
/// A channel without noise energy reports `+inf`.
pub fn compute_snr(clean: &DMatrix<f64>, noise: &DMatrix<f64>) -> Result<Vec<f64>> {
    if clean.shape() != noise.shape() {
        return Err(Error::DimensionMismatch {
            context: "snr signal and noise".into(),
            expected: format!("{:?}", clean.shape()),
            found: format!("{:?}", noise.shape()),
        });
    }
    Ok((0..clean.nrows())
        .map(|j| {
            let signal = clean.row(j).norm_squared();
            let noise = noise.row(j).norm_squared();
            if noise == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (signal / noise).log10()
            }
        })
        .collect())
}

/// Average of per-channel SNR values in dB.
pub fn mean_snr_db(channels: &[f64]) -> f64 {
    if channels.is_empty() {
        return f64::NAN;
    }
    channels.iter().sum::<f64>() / channels.len() as f64
}

/// `||K - K*||_2`.
pub fn gain_error(k: &DMatrix<f64>, k_star: &DMatrix<f64>) -> Result<f64> {
    if k.shape() != k_star.shape() {
        return Err(Error::DimensionMismatch {
            context: "gain error".into(),
            expected: format!("{:?}", k_star.shape()),
            found: format!("{:?}", k.shape()),
        });
    }
    Ok(spectral_norm(&(k - k_star)))
}

/// Spectral radius of `A + B K_x` for the true plant.
pub fn closed_loop_radius(
    plant: &StateSpaceModel<f64>,
    gains: &ControllerGains<f64>,
) -> Result<f64> {
    spectral_radius(&plant.closed_loop_matrix(gains)?)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    })
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}
