//! Lowering of [`ConicProblem`] to vectorized standard form.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{AffineExpr, ConicProblem, ObjectiveTerm, VarDecl};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Cone `K = R_+^nonneg x S_+^{psd[0]} x ...`, PSD blocks stored as svec.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConeDims {
    pub nonneg: usize,
    pub psd: Vec<usize>,
}

impl ConeDims {
    pub fn dim(&self) -> usize {
        self.nonneg + self.psd.iter().map(|k| k * (k + 1) / 2).sum::<usize>()
    }

    /// Degree of the cone (rank of its identity element).
    pub fn degree(&self) -> usize {
        self.nonneg + self.psd.iter().sum::<usize>()
    }
}

/// `minimize c'x  subject to  A x = b,  s = h - G x in K`.
///
/// PSD slacks use the column-major lower-triangular `svec` layout with
/// off-diagonal entries scaled by `sqrt(2)`.
#[derive(Clone, Debug)]
pub struct StandardForm<T: Real> {
    pub c: DVector<T>,
    pub a: DMatrix<T>,
    pub b: DVector<T>,
    pub g: DMatrix<T>,
    pub h: DVector<T>,
    pub cones: ConeDims,
}

pub(crate) struct Compiled<T: Real> {
    pub form: StandardForm<T>,
    layout: Vec<(VarDecl, usize)>,
}

impl<T: Real> Compiled<T> {
    /// Variable values from a standard-form solution vector.
    pub fn unpack(&self, x: &DVector<T>) -> BTreeMap<String, DMatrix<T>> {
        self.layout
            .iter()
            .map(|(d, off)| {
                let m = DMatrix::from_fn(d.rows, d.cols, |a, b| x[scalar_index(d, *off, a, b)]);
                (d.name.clone(), m)
            })
            .collect()
    }
}

fn scalar_index(d: &VarDecl, offset: usize, a: usize, b: usize) -> usize {
    if d.symmetric {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        offset + hi * (hi + 1) / 2 + lo
    } else {
        offset + a + b * d.rows
    }
}

pub(crate) fn svec_len(k: usize) -> usize {
    k * (k + 1) / 2
}

/// Coefficients of an expression: row `i + j*rows` of the returned matrix
/// holds entry `(i, j)` as a function of the scalar unknowns.
struct Linear<T: Real> {
    coef: DMatrix<T>,
    constant: DVector<T>,
}

struct Lowering<'a> {
    layout: &'a [(VarDecl, usize)],
    nx: usize,
}

impl Lowering<'_> {
    fn expr<T: Real>(&self, e: &AffineExpr<T>) -> Linear<T> {
        let (rows, cols) = e.shape();
        let mut coef = DMatrix::zeros(rows * cols, self.nx);
        for t in &e.terms {
            let (decl, off) = &self.layout[t.var.index];
            let (vr, vc) = t.view_shape();
            for j in 0..cols {
                for b in 0..vc {
                    let rc = match &t.right {
                        Some(r) => r[(b, j)],
                        None if b == j => T::one(),
                        None => continue,
                    };
                    if rc == T::zero() {
                        continue;
                    }
                    for i in 0..rows {
                        for a in 0..vr {
                            let lc = match &t.left {
                                Some(l) => l[(i, a)],
                                None if a == i => T::one(),
                                None => continue,
                            };
                            if lc == T::zero() {
                                continue;
                            }
                            let (va, vb) = if t.transposed { (b, a) } else { (a, b) };
                            let k = scalar_index(decl, *off, va, vb);
                            coef[(i + j * rows, k)] += t.scale * lc * rc;
                        }
                    }
                }
            }
        }
        let constant = DVector::from_iterator(rows * cols, e.constant.iter().copied());
        Linear { coef, constant }
    }
}

/// Rows for a cone constraint `s = h - G x` with `s = const + coef x`.
struct ConeRows<T: Real> {
    g: Vec<DVector<T>>,
    h: Vec<T>,
}

impl<T: Real> ConeRows<T> {
    fn new() -> Self {
        Self {
            g: Vec::new(),
            h: Vec::new(),
        }
    }

    fn push(&mut self, coef: DVector<T>, constant: T) {
        self.g.push(-coef);
        self.h.push(constant);
    }
}

pub(crate) fn compile<T: Real>(p: &ConicProblem<T>) -> Result<Compiled<T>> {
    let mut layout = Vec::with_capacity(p.vars.len());
    let mut nx = 0;
    for d in &p.vars {
        layout.push((d.clone(), nx));
        nx += d.scalar_count();
    }

    // Epigraph auxiliaries.
    let mut aux_l1 = Vec::new();
    let mut aux_fro = Vec::new();
    for (k, term) in p.objective.iter().enumerate() {
        match term {
            ObjectiveTerm::L1 { expr, .. } => {
                let (r, c) = expr.shape();
                aux_l1.push((k, nx));
                nx += r * c;
            }
            ObjectiveTerm::Frobenius { .. } => {
                aux_fro.push((k, nx));
                nx += 1;
            }
            _ => {}
        }
    }
    let low = Lowering {
        layout: &layout,
        nx,
    };

    let mut c = DVector::zeros(nx);
    for term in &p.objective {
        match term {
            ObjectiveTerm::Trace { var, weight } => {
                let (d, off) = &layout[var.index];
                for i in 0..d.rows {
                    c[scalar_index(d, *off, i, i)] += *weight;
                }
            }
            ObjectiveTerm::Inner { var, coeffs } => {
                let (d, off) = &layout[var.index];
                for a in 0..d.rows {
                    for b in 0..d.cols {
                        c[scalar_index(d, *off, a, b)] += coeffs[(a, b)];
                    }
                }
            }
            _ => {}
        }
    }

    // Equalities.
    let mut a_rows: Vec<DVector<T>> = Vec::new();
    let mut b_vals: Vec<T> = Vec::new();
    for e in &p.equalities {
        let lin = low.expr(e);
        for r in 0..lin.coef.nrows() {
            a_rows.push(lin.coef.row(r).transpose());
            b_vals.push(-lin.constant[r]);
        }
    }

    // Nonnegative orthant: user constraints then L1 epigraphs.
    let mut lp = ConeRows::new();
    for e in &p.nonnegatives {
        let lin = low.expr(e);
        for r in 0..lin.coef.nrows() {
            lp.push(lin.coef.row(r).transpose(), lin.constant[r]);
        }
    }
    for &(k, off) in &aux_l1 {
        let ObjectiveTerm::L1 { expr, weight } = &p.objective[k] else {
            unreachable!()
        };
        let lin = low.expr(expr);
        for r in 0..lin.coef.nrows() {
            c[off + r] += *weight;
            let e_row = lin.coef.row(r).transpose();
            // t - e >= 0 and t + e >= 0
            let mut plus = -&e_row;
            plus[off + r] += T::one();
            lp.push(plus, -lin.constant[r]);
            let mut minus = e_row;
            minus[off + r] += T::one();
            lp.push(minus, lin.constant[r]);
        }
    }

    // PSD blocks: user LMIs then Frobenius arrows.
    let sqrt2 = T::lit(std::f64::consts::SQRT_2);
    let mut psd_rows = ConeRows::new();
    let mut psd_sizes = Vec::new();
    for con in &p.psd {
        let k = con.size;
        let mut full = DMatrix::zeros(k * k, nx);
        let mut full_c = DVector::zeros(k * k);
        for blk in &con.blocks {
            let lin = low.expr(&blk.expr);
            let (r, cc) = blk.expr.shape();
            for j in 0..cc {
                for i in 0..r {
                    let src = i + j * r;
                    let (gi, gj) = (blk.row + i, blk.col + j);
                    full.row_mut(gi + gj * k).copy_from(&lin.coef.row(src));
                    full_c[gi + gj * k] = lin.constant[src];
                    if blk.row != blk.col {
                        full.row_mut(gj + gi * k).copy_from(&lin.coef.row(src));
                        full_c[gj + gi * k] = lin.constant[src];
                    }
                }
            }
        }
        let scale = full.amax().max(full_c.amax()).max(T::one());
        let tol = T::lit(1e-12) * scale;
        for j in 0..k {
            for i in (j + 1)..k {
                let d = (full.row(i + j * k) - full.row(j + i * k)).amax();
                let dc = (full_c[i + j * k] - full_c[j + i * k]).abs();
                if d > tol || dc > tol {
                    return Err(Error::MalformedProblem(format!(
                        "PSD expression is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        for j in 0..k {
            for i in j..k {
                let idx = i + j * k;
                let w = if i == j { T::one() } else { sqrt2 };
                let shift = if i == j { con.margin } else { T::zero() };
                psd_rows.push(full.row(idx).transpose() * w, (full_c[idx] - shift) * w);
            }
        }
        psd_sizes.push(k);
    }
    for &(k, off) in &aux_fro {
        let ObjectiveTerm::Frobenius { expr, weight } = &p.objective[k] else {
            unreachable!()
        };
        c[off] += *weight;
        let lin = low.expr(expr);
        let q = lin.coef.nrows();
        let size = q + 1;
        // [[t I_q, e], [e', t]]
        for j in 0..size {
            for i in j..size {
                let mut row = DVector::zeros(nx);
                let mut cst = T::zero();
                if i == j {
                    row[off] = T::one();
                } else if i == q {
                    row = lin.coef.row(j).transpose() * sqrt2;
                    cst = lin.constant[j] * sqrt2;
                }
                psd_rows.push(row, cst);
            }
        }
        psd_sizes.push(size);
    }

    let stack = |rows: &[DVector<T>]| {
        let mut m = DMatrix::zeros(rows.len(), nx);
        for (i, r) in rows.iter().enumerate() {
            m.row_mut(i).copy_from(&r.transpose());
        }
        m
    };
    let nonneg = lp.g.len();
    let mut g_rows = lp.g;
    g_rows.extend(psd_rows.g);
    let mut h_vals = lp.h;
    h_vals.extend(psd_rows.h);

    let form = StandardForm {
        c,
        a: stack(&a_rows),
        b: DVector::from_vec(b_vals),
        g: stack(&g_rows),
        h: DVector::from_vec(h_vals),
        cones: ConeDims {
            nonneg,
            psd: psd_sizes,
        },
    };
    debug_assert_eq!(form.g.nrows(), form.cones.dim());
    Ok(Compiled { form, layout })
}
