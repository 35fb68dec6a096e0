//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, Dyn, SymmetricEigen, SVD};

use crate::error::{dim_err, Error, Result};
use crate::scalar::Real;

pub(crate) fn ensure_square<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare(format!(
            "{what} ({}x{})",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn ensure_finite<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite_value()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub(crate) fn ensure_shape<T: Real>(
    m: &DMatrix<T>,
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(dim_err(
            what,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius<T: Real>(m: &DMatrix<T>) -> Result<T> {
    ensure_square(m, "spectral radius input")?;
    ensure_finite(m, "spectral radius input")?;
    if m.is_empty() {
        return Ok(T::zero());
    }
    let mf = m.map(|x| x.to_f64_lossy());
    let fm = faer::Mat::<f64>::from_fn(mf.nrows(), mf.ncols(), |i, j| mf[(i, j)]);
    if let Ok(eig) = fm.eigenvalues() {
        let rho = eig.iter().map(|c| c.re.hypot(c.im)).fold(0.0, f64::max);
        if rho.is_finite() {
            return Ok(T::lit(rho));
        }
    }
    // Fallback: nalgebra's Schur iteration, bounded and retried on shifted
    // copies, which moves every eigenvalue by the same amount.
    let scale = m.amax().max(T::one());
    for shift in [0.0, 0.137, -0.291, 0.613] {
        let s = T::lit(shift) * scale;
        let shifted = m + DMatrix::identity(m.nrows(), m.ncols()) * s;
        if let Some(schur) =
            nalgebra::Schur::try_new(shifted, T::default_epsilon(), 500 * m.nrows())
        {
            let eig = schur.complex_eigenvalues();
            return Ok(eig
                .iter()
                .map(|c| {
                    let re = c.re - s;
                    (re * re + c.im * c.im).sqrt()
                })
                .fold(T::zero(), |acc, v| if v > acc { v } else { acc }));
        }
    }
    Err(Error::IllConditioned(
        "eigenvalue iteration did not converge".into(),
    ))
}

/// Thin SVD with both factors, singular values in descending order.
///
/// Both faer and nalgebra occasionally lose several digits on the highly
/// degenerate block matrices the solver builds, in one orientation or the
/// other. Each candidate is checked by recomposition and the first accurate
/// one is returned (the most accurate if none passes).
pub fn svd<T: Real>(m: &DMatrix<T>) -> SVD<T, Dyn, Dyn> {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return SVD {
            u: Some(DMatrix::zeros(r, 0)),
            v_t: Some(DMatrix::zeros(0, c)),
            singular_values: nalgebra::DVector::zeros(0),
        };
    }
    let mf = m.map(|x| x.to_f64_lossy());
    let scale = mf.amax();
    let tol = 64.0 * f64::EPSILON * scale * (r.max(c) as f64).sqrt();
    let mut best: Option<(f64, SvdF64)> = None;
    for attempt in 0..4 {
        let transpose = attempt % 2 == 1;
        let cand = if attempt < 2 {
            faer_svd(&mf, transpose)
        } else {
            nalgebra_svd(&mf, transpose)
        };
        let Some(cand) = cand else { continue };
        let err = cand.recompose_error(&mf);
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, cand));
        }
        if err <= tol {
            break;
        }
    }
    let (_, f) = best.expect("at least one SVD backend succeeds");
    SVD {
        u: Some(f.u.map(T::lit)),
        v_t: Some(f.v_t.map(T::lit)),
        singular_values: f.s.map(T::lit),
    }
}

struct SvdF64 {
    u: DMatrix<f64>,
    s: nalgebra::DVector<f64>,
    v_t: DMatrix<f64>,
}

impl SvdF64 {
    fn recompose_error(&self, m: &DMatrix<f64>) -> f64 {
        let rec = &self.u * DMatrix::from_diagonal(&self.s) * &self.v_t;
        let orth =
            |q: &DMatrix<f64>| (q.transpose() * q - DMatrix::identity(q.ncols(), q.ncols())).amax();
        let scale = m.amax().max(f64::MIN_POSITIVE);
        (rec - m)
            .amax()
            .max(scale * orth(&self.u))
            .max(scale * orth(&self.v_t.transpose()))
    }

    fn transposed(self) -> Self {
        Self {
            u: self.v_t.transpose(),
            s: self.s,
            v_t: self.u.transpose(),
        }
    }
}

fn faer_svd(m: &DMatrix<f64>, transpose: bool) -> Option<SvdF64> {
    let src = if transpose { m.transpose() } else { m.clone() };
    let (r, c) = src.shape();
    let k = r.min(c);
    let fm = faer::Mat::<f64>::from_fn(r, c, |i, j| src[(i, j)]);
    let dec = fm.thin_svd().ok()?;
    let (u, v, sv) = (dec.U(), dec.V(), dec.S().column_vector());
    let out = SvdF64 {
        u: DMatrix::from_fn(r, k, |i, j| u[(i, j)]),
        s: nalgebra::DVector::from_fn(k, |i, _| sv[i]),
        v_t: DMatrix::from_fn(k, c, |i, j| v[(j, i)]),
    };
    Some(if transpose { out.transposed() } else { out })
}

fn nalgebra_svd(m: &DMatrix<f64>, transpose: bool) -> Option<SvdF64> {
    let src = if transpose { m.transpose() } else { m.clone() };
    let mut dec = src.svd(true, true);
    dec.sort_by_singular_values();
    let out = SvdF64 {
        u: dec.u?,
        s: dec.singular_values,
        v_t: dec.v_t?,
    };
    Some(if transpose { out.transposed() } else { out })
}

/// Operator 2-norm (largest singular value).
pub fn spectral_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    svd(m).singular_values.max()
}

pub fn singular_values<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<T> = svd(m).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Symmetric part `(m + m') / 2`.
pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut ev: Vec<T> = SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

pub fn min_sym_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).first().copied().unwrap_or_else(T::zero)
}

pub fn max_sym_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).last().copied().unwrap_or_else(T::zero)
}

/// Numerical rank with threshold `rel_tol * sigma_max * max(rows, cols)`.
pub fn numerical_rank<T: Real>(m: &DMatrix<T>, rel_tol: T) -> (usize, Vec<T>) {
    let sv = singular_values(m);
    let smax = sv.first().copied().unwrap_or_else(T::zero);
    if smax <= T::zero() {
        return (0, sv);
    }
    let thr = rel_tol * smax * T::from_count(m.nrows().max(m.ncols()));
    let rank = sv.iter().filter(|&&s| s > thr).count();
    (rank, sv)
}

/// Orthonormal basis (as columns) of the row space of `m`.
///
/// Uses column-pivoted Householder QR of `m'`, which stays backward stable on
/// the sparse, highly degenerate constraint matrices where iterative SVDs can
/// lose digits. `rel_tol` is compared against the leading diagonal of `R`.
pub fn row_space_basis<T: Real>(m: &DMatrix<T>, rel_tol: T) -> DMatrix<T> {
    let cols = m.ncols();
    if m.nrows() == 0 || cols == 0 {
        return DMatrix::zeros(cols, 0);
    }
    let qr = m.transpose().col_piv_qr();
    let r = qr.r();
    let k = r.nrows().min(r.ncols());
    let lead = r[(0, 0)].abs();
    if lead <= T::zero() {
        return DMatrix::zeros(cols, 0);
    }
    let rank = (0..k)
        .take_while(|&i| r[(i, i)].abs() > rel_tol * lead)
        .count();
    qr.q().columns(0, rank).into_owned()
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space_basis<T: Real>(m: &DMatrix<T>, rel_tol: T) -> DMatrix<T> {
    let cols = m.ncols();
    let row = row_space_basis(m, rel_tol);
    if row.ncols() == cols {
        return DMatrix::zeros(cols, 0);
    }
    let proj = DMatrix::<T>::identity(cols, cols) - &row * row.transpose();
    let eig = SymmetricEigen::new(symmetrize(&proj));
    let half = T::lit(0.5);
    let keep: Vec<usize> = (0..cols).filter(|&i| eig.eigenvalues[i] > half).collect();
    let mut basis = DMatrix::zeros(cols, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        basis.set_column(k, &eig.eigenvectors.column(i));
    }
    basis
}

/// Minimum-norm least-squares solution of `m x = rhs` via a truncated SVD.
pub fn lstsq_min_norm<T: Real>(m: &DMatrix<T>, rhs: &DMatrix<T>, rel_tol: T) -> DMatrix<T> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, rhs.ncols());
    }
    let svd = svd(m);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd
        .singular_values
        .iter()
        .fold(T::zero(), |a, &b| if b > a { b } else { a });
    let thr = rel_tol * smax * T::from_count(r.max(c));
    let mut out = DMatrix::zeros(c, rhs.ncols());
    for i in 0..svd.singular_values.len() {
        let s = svd.singular_values[i];
        if s <= thr || s <= T::zero() {
            continue;
        }
        let coeff = (u.column(i).transpose() * rhs) / s;
        out += v_t.row(i).transpose() * coeff;
    }
    out
}

/// Smallest `gamma` such that `lhs <= gamma * rhs` in the PSD order.
///
/// Both arguments must be symmetric positive semidefinite. Returns `None`
/// when the range of `lhs` is not contained in the range of `rhs`, in which
/// case no finite multiplier exists.
pub fn psd_multiplier<T: Real>(lhs: &DMatrix<T>, rhs: &DMatrix<T>, rel_tol: T) -> Option<T> {
    let k = lhs.nrows();
    if k == 0 {
        return Some(T::zero());
    }
    let lhs = symmetrize(lhs);
    let eig = SymmetricEigen::new(symmetrize(rhs));
    let rmax = eig
        .eigenvalues
        .iter()
        .fold(T::zero(), |a, &b| if b > a { b } else { a });
    let lnorm = spectral_norm(&lhs);
    if lnorm <= T::zero() {
        return Some(T::zero());
    }
    if rmax <= T::zero() {
        return None;
    }
    let thr = rel_tol * rmax;
    let keep: Vec<usize> = (0..k).filter(|&i| eig.eigenvalues[i] > thr).collect();
    let mut basis = DMatrix::zeros(k, keep.len());
    let mut inv_sqrt = DMatrix::zeros(keep.len(), keep.len());
    for (j, &i) in keep.iter().enumerate() {
        basis.set_column(j, &eig.eigenvectors.column(i));
        inv_sqrt[(j, j)] = T::one() / eig.eigenvalues[i].sqrt();
    }
    // Part of lhs living outside range(rhs) cannot be dominated.
    let outside = DMatrix::<T>::identity(k, k) - &basis * basis.transpose();
    let leak = spectral_norm(&(&outside * &lhs * &outside));
    if leak > T::lit(1e-9).max(rel_tol) * lnorm {
        return None;
    }
    let reduced = &inv_sqrt * basis.transpose() * &lhs * &basis * &inv_sqrt;
    Some(max_sym_eigenvalue(&reduced).max(T::zero()))
}

/// Solve `p x = rhs` for symmetric positive definite `p`.
pub fn spd_solve<T: Real>(p: &DMatrix<T>, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
    let chol = p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::IllConditioned("matrix is not positive definite".into()))?;
    Ok(chol.solve(rhs))
}
