//! Infeasible-start primal-dual interior point method for
//! `min c'x  s.t.  A x = b,  G x + s = h,  s in K`.
//!
//! Nesterov-Todd scaling, Mehrotra predictor-corrector steps and a dense
//! LU factorization of the reduced KKT system. Before iterating, redundant
//! equality rows are dropped (inconsistent ones certify infeasibility) and
//! the unknowns are restricted to the row space of `[A; G]`, so directions
//! that touch no constraint are fixed at their minimum-norm value.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::compile::{svec_len, ConeDims, StandardForm};
use super::{SolveStatus, SolverSettings};
use crate::linalg::{row_space_basis, symmetrize};
use crate::scalar::Real;

const STEP: f64 = 0.99;
const EXPON: i32 = 3;
const REDUCTION_TOL: f64 = 1e-12;
const LEAK_TOL: f64 = 1e-9;
const REFINE_STEPS: usize = 3;

pub(crate) struct IpmResult<T: Real> {
    pub status: SolveStatus,
    pub x: DVector<T>,
    pub dual_objective: T,
    pub gap: T,
    pub iterations: usize,
}

// ---------------------------------------------------------------------------
// svec helpers

pub(crate) fn smat<T: Real>(v: &[T], k: usize) -> DMatrix<T> {
    let inv = T::one() / T::lit(std::f64::consts::SQRT_2);
    let mut m = DMatrix::zeros(k, k);
    let mut idx = 0;
    for j in 0..k {
        for i in j..k {
            let val = if i == j { v[idx] } else { v[idx] * inv };
            m[(i, j)] = val;
            m[(j, i)] = val;
            idx += 1;
        }
    }
    m
}

pub(crate) fn svec_into<T: Real>(m: &DMatrix<T>, out: &mut [T]) {
    let k = m.nrows();
    let s2 = T::lit(std::f64::consts::SQRT_2);
    let mut idx = 0;
    for j in 0..k {
        for i in j..k {
            out[idx] = if i == j {
                m[(i, i)]
            } else {
                (m[(i, j)] + m[(j, i)]) * T::lit(0.5) * s2
            };
            idx += 1;
        }
    }
}

struct Cone {
    nonneg: usize,
    blocks: Vec<(usize, usize)>, // (offset, size)
    dim: usize,
    degree: usize,
}

impl Cone {
    fn new(d: &ConeDims) -> Self {
        let mut off = d.nonneg;
        let blocks = d
            .psd
            .iter()
            .map(|&k| {
                let b = (off, k);
                off += svec_len(k);
                b
            })
            .collect();
        Self {
            nonneg: d.nonneg,
            blocks,
            dim: d.dim(),
            degree: d.degree(),
        }
    }

    fn identity<T: Real>(&self) -> DVector<T> {
        let mut e = DVector::zeros(self.dim);
        for i in 0..self.nonneg {
            e[i] = T::one();
        }
        for &(off, k) in &self.blocks {
            let mut idx = off;
            for j in 0..k {
                e[idx] = T::one();
                idx += k - j;
            }
        }
        e
    }

    fn block<T: Real>(&self, v: &DVector<T>, b: usize) -> DMatrix<T> {
        let (off, k) = self.blocks[b];
        smat(&v.as_slice()[off..off + svec_len(k)], k)
    }

    fn set_block<T: Real>(&self, v: &mut DVector<T>, b: usize, m: &DMatrix<T>) {
        let (off, k) = self.blocks[b];
        svec_into(m, &mut v.as_mut_slice()[off..off + svec_len(k)]);
    }

    /// Smallest eigenvalue over all blocks (componentwise minimum for the orthant).
    fn min_eig<T: Real>(&self, v: &DVector<T>) -> T {
        let mut lo: Option<T> = None;
        let mut upd = |x: T| lo = Some(lo.map_or(x, |l: T| l.min(x)));
        for i in 0..self.nonneg {
            upd(v[i]);
        }
        for b in 0..self.blocks.len() {
            let ev = SymmetricEigen::new(self.block(v, b)).eigenvalues;
            upd(ev.min());
        }
        lo.unwrap_or_else(T::zero)
    }

    /// Largest `t` such that `v + t dv` stays in the cone (`v` interior).
    /// `None` when unbounded.
    fn max_step<T: Real>(&self, v: &DVector<T>, dv: &DVector<T>) -> Option<T> {
        let mut best: Option<T> = None;
        let mut upd = |t: T| best = Some(best.map_or(t, |b: T| b.min(t)));
        for i in 0..self.nonneg {
            if dv[i] < T::zero() {
                upd(-v[i] / dv[i]);
            }
        }
        for b in 0..self.blocks.len() {
            let s = self.block(v, b);
            let d = self.block(dv, b);
            let Some(chol) = s.cholesky() else {
                upd(T::zero());
                continue;
            };
            let l = chol.l();
            let li = l
                .clone()
                .try_inverse()
                .unwrap_or_else(|| DMatrix::zeros(l.nrows(), l.ncols()));
            let m = &li * d * li.transpose();
            let lmin = SymmetricEigen::new(symmetrize(&m)).eigenvalues.min();
            if lmin < T::zero() {
                upd(-T::one() / lmin);
            }
        }
        best
    }

    /// Jordan product.
    fn prod<T: Real>(&self, a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(self.dim);
        for i in 0..self.nonneg {
            out[i] = a[i] * b[i];
        }
        for blk in 0..self.blocks.len() {
            let am = self.block(a, blk);
            let bm = self.block(b, blk);
            let p = (&am * &bm + &bm * &am) * T::lit(0.5);
            self.set_block(&mut out, blk, &p);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Nesterov-Todd scaling
//
// W z = W^{-T} s = lambda. Orthant: W = diag(sqrt(s/z)). PSD block:
// W(Z) = R' Z R with R = L_s V diag(lambda)^{-1/2}, where L_s L_s' = S,
// L_z L_z' = Z and L_z' L_s = U diag(lambda) V'.

struct Scaling<T: Real> {
    w: DVector<T>,
    r: Vec<DMatrix<T>>,
    rinv: Vec<DMatrix<T>>,
    lambda_psd: Vec<DVector<T>>,
    lambda: DVector<T>,
}

impl<T: Real> Scaling<T> {
    fn compute(cone: &Cone, s: &DVector<T>, z: &DVector<T>) -> Option<Self> {
        let mut w = DVector::zeros(cone.nonneg);
        let mut lambda = DVector::zeros(cone.dim);
        for i in 0..cone.nonneg {
            if s[i] <= T::zero() || z[i] <= T::zero() {
                return None;
            }
            w[i] = (s[i] / z[i]).sqrt();
            lambda[i] = (s[i] * z[i]).sqrt();
        }
        let mut r = Vec::new();
        let mut rinv = Vec::new();
        let mut lambda_psd = Vec::new();
        for b in 0..cone.blocks.len() {
            let ls = cone.block(s, b).cholesky()?.l();
            let lz = cone.block(z, b).cholesky()?.l();
            let svd = crate::linalg::svd(&(lz.transpose() * &ls));
            let v = svd.v_t?.transpose();
            let lam = svd.singular_values;
            if lam.iter().any(|&x| x <= T::zero()) {
                return None;
            }
            let inv_sqrt = DMatrix::from_diagonal(&lam.map(|x| T::one() / x.sqrt()));
            let rb = &ls * &v * &inv_sqrt;
            let rbinv = rb.clone().try_inverse()?;
            let lmat = DMatrix::from_diagonal(&lam);
            cone.set_block(&mut lambda, b, &lmat);
            r.push(rb);
            rinv.push(rbinv);
            lambda_psd.push(lam);
        }
        Some(Self {
            w,
            r,
            rinv,
            lambda_psd,
            lambda,
        })
    }

    fn map_blocks(
        &self,
        cone: &Cone,
        v: &DVector<T>,
        lp: impl Fn(usize, T) -> T,
        psd: impl Fn(usize, &DMatrix<T>) -> DMatrix<T>,
    ) -> DVector<T> {
        let mut out = DVector::zeros(cone.dim);
        for i in 0..cone.nonneg {
            out[i] = lp(i, v[i]);
        }
        for b in 0..cone.blocks.len() {
            let m = psd(b, &cone.block(v, b));
            cone.set_block(&mut out, b, &m);
        }
        out
    }

    /// `W v`.
    fn apply_w(&self, cone: &Cone, v: &DVector<T>) -> DVector<T> {
        self.map_blocks(
            cone,
            v,
            |i, x| self.w[i] * x,
            |b, m| self.r[b].transpose() * m * &self.r[b],
        )
    }

    /// `W' v`.
    fn apply_wt(&self, cone: &Cone, v: &DVector<T>) -> DVector<T> {
        self.map_blocks(
            cone,
            v,
            |i, x| self.w[i] * x,
            |b, m| &self.r[b] * m * self.r[b].transpose(),
        )
    }

    /// `(W'W)^{-1} v`.
    fn apply_hinv(&self, cone: &Cone, v: &DVector<T>) -> DVector<T> {
        self.map_blocks(
            cone,
            v,
            |i, x| x / (self.w[i] * self.w[i]),
            |b, m| {
                let q = self.rinv[b].transpose() * &self.rinv[b];
                &q * m * &q
            },
        )
    }

    /// Solve `lambda o x = y` for `x`.
    fn lambda_div(&self, cone: &Cone, y: &DVector<T>) -> DVector<T> {
        self.map_blocks(
            cone,
            y,
            |i, x| x / self.lambda[i],
            |b, m| {
                let lam = &self.lambda_psd[b];
                DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
                    m[(i, j)] * T::lit(2.0) / (lam[i] + lam[j])
                })
            },
        )
    }
}

// ---------------------------------------------------------------------------
// KKT system
//
// [ H  A' ] [dx]   [bx + G'(W'W)^{-1} bz]
// [ A  0  ] [dy] = [by                  ],   H = G'(W'W)^{-1}G,
// dz = (W'W)^{-1}(G dx - bz).

struct Kkt<T: Real> {
    lu: nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>,
    mat: DMatrix<T>,
    nx: usize,
}

impl<T: Real> Kkt<T> {
    fn factor(a: &DMatrix<T>, g: &DMatrix<T>, hinv_g: &DMatrix<T>) -> Self {
        let nx = g.ncols();
        let p = a.nrows();
        let h = g.transpose() * hinv_g;
        let mut mat = DMatrix::zeros(nx + p, nx + p);
        mat.view_mut((0, 0), (nx, nx)).copy_from(&symmetrize(&h));
        mat.view_mut((0, nx), (nx, p)).copy_from(&a.transpose());
        mat.view_mut((nx, 0), (p, nx)).copy_from(a);
        let lu = mat.clone().lu();
        Self { lu, mat, nx }
    }

    fn solve(&self, rhs: &DVector<T>) -> Option<(DVector<T>, DVector<T>)> {
        let mut sol = self.lu.solve(rhs)?;
        for _ in 0..2 {
            let res = rhs - &self.mat * &sol;
            if let Some(corr) = self.lu.solve(&res) {
                sol += corr;
            }
        }
        if sol.iter().any(|v| !v.is_finite_value()) {
            return None;
        }
        let dx = sol.rows(0, self.nx).into_owned();
        let dy = sol.rows(self.nx, sol.len() - self.nx).into_owned();
        Some((dx, dy))
    }
}

struct Best<T: Real> {
    merit: T,
    x: DVector<T>,
    dual_objective: T,
    gap: T,
    acceptable: bool,
}

struct Reduced<T: Real> {
    c: DVector<T>,
    a: DMatrix<T>,
    b: DVector<T>,
    g: DMatrix<T>,
    h: DVector<T>,
    basis: DMatrix<T>,
}

enum Preprocess<T: Real> {
    Ready(Reduced<T>),
    Done(SolveStatus),
}

fn preprocess<T: Real>(f: &StandardForm<T>) -> Preprocess<T> {
    let nx = f.c.len();
    let eps = T::default_epsilon();
    let tol = T::lit(REDUCTION_TOL).max(eps * T::lit(10.0));
    let leak_tol = T::lit(LEAK_TOL).max(eps * T::lit(1e3));

    // Drop dependent equality rows; detect inconsistent ones.
    let (a, b) = if f.a.nrows() > 0 {
        let svd = crate::linalg::svd(&f.a);
        let u = svd.u.expect("u");
        let v_t = svd.v_t.expect("v_t");
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > tol * smax.max(T::one()))
            .collect();
        let mut a_r = DMatrix::zeros(keep.len(), nx);
        let mut b_r = DVector::zeros(keep.len());
        let mut proj = DVector::zeros(f.b.len());
        for (k, &i) in keep.iter().enumerate() {
            let ui = u.column(i);
            let coeff = ui.dot(&f.b);
            proj += ui * coeff;
            a_r.row_mut(k)
                .copy_from(&(v_t.row(i) * svd.singular_values[i]));
            b_r[k] = coeff;
        }
        let leak = (&f.b - proj).norm();
        if leak > leak_tol * f.b.norm().max(T::one()) {
            return Preprocess::Done(SolveStatus::Infeasible);
        }
        (a_r, b_r)
    } else {
        (DMatrix::zeros(0, nx), DVector::zeros(0))
    };

    let mut stacked = DMatrix::zeros(a.nrows() + f.g.nrows(), nx);
    stacked.rows_mut(0, a.nrows()).copy_from(&a);
    stacked.rows_mut(a.nrows(), f.g.nrows()).copy_from(&f.g);
    let basis = row_space_basis(&stacked, tol);
    let c_red = basis.transpose() * &f.c;
    let c_leak = (&f.c - &basis * &c_red).norm();
    if c_leak > leak_tol * f.c.norm().max(T::one()) {
        // The objective decreases along a direction no constraint sees.
        return Preprocess::Done(SolveStatus::Unbounded);
    }
    Preprocess::Ready(Reduced {
        c: c_red,
        a: &a * &basis,
        b,
        g: &f.g * &basis,
        h: f.h.clone(),
        basis,
    })
}

fn shift_into_cone<T: Real>(cone: &Cone, v: &mut DVector<T>) {
    let e = cone.identity::<T>();
    let t = -cone.min_eig(v);
    if t >= -T::lit(1e-8) * v.norm().max(T::one()) {
        *v += e * (T::one() + t);
    }
}

pub(crate) fn solve_standard<T: Real>(
    f: &StandardForm<T>,
    settings: &SolverSettings<T>,
) -> IpmResult<T> {
    let nx_full = f.c.len();
    let fail = |status, iterations| IpmResult {
        status,
        x: DVector::zeros(nx_full),
        dual_objective: T::zero(),
        gap: T::zero(),
        iterations,
    };
    let red = match preprocess(f) {
        Preprocess::Ready(r) => r,
        Preprocess::Done(status) => return fail(status, 0),
    };
    let cone = Cone::new(&f.cones);
    let nx = red.c.len();
    let p = red.a.nrows();
    let (a, b, g, h, c) = (&red.a, &red.b, &red.g, &red.h, &red.c);
    let lift = |x: &DVector<T>| &red.basis * x;

    if cone.dim == 0 {
        // Pure equality-constrained linear objective.
        let status = if c.norm() > T::zero() {
            SolveStatus::Unbounded
        } else {
            SolveStatus::Optimal
        };
        let x = crate::linalg::lstsq_min_norm(
            a,
            &DMatrix::from_column_slice(b.len(), 1, b.as_slice()),
            T::lit(1e-14),
        );
        return IpmResult {
            status,
            x: lift(&x.column(0).into_owned()),
            dual_objective: T::zero(),
            gap: T::zero(),
            iterations: 0,
        };
    }

    // Initial points from the W = I KKT system.
    let kkt0 = Kkt::factor(a, g, g);
    let stack = |top: DVector<T>, bottom: &DVector<T>| {
        let mut r = DVector::zeros(nx + p);
        r.rows_mut(0, nx).copy_from(&top);
        r.rows_mut(nx, p).copy_from(bottom);
        r
    };
    // minimize ||G x - h|| s.t. A x = b
    let Some((mut x, _)) = kkt0.solve(&stack(g.transpose() * h, b)) else {
        return fail(SolveStatus::NumericalFailure, 0);
    };
    let mut s = h - g * &x;
    // minimize ||z|| s.t. G'z + A'y + c = 0
    let Some((xd, mut y)) = kkt0.solve(&stack(-c, &DVector::zeros(p))) else {
        return fail(SolveStatus::NumericalFailure, 0);
    };
    let mut z = g * xd;
    shift_into_cone(&cone, &mut s);
    shift_into_cone(&cone, &mut z);

    let resx0 = c.norm().max(T::one());
    let resy0 = b.norm().max(T::one());
    let resz0 = h.norm().max(T::one());
    let degree = T::from_count(cone.degree);
    let e = cone.identity::<T>();
    let feastol = settings.feas_tol;
    let mut best: Option<Best<T>> = None;
    // Numerical trouble near the optimum: fall back to the best iterate seen if
    // it meets the reduced accuracy, otherwise report failure.
    let stalled = |best: Option<Best<T>>, iterations: usize| match best {
        Some(b) if b.acceptable => IpmResult {
            status: SolveStatus::Optimal,
            x: lift(&b.x),
            dual_objective: b.dual_objective,
            gap: b.gap,
            iterations,
        },
        _ => fail(SolveStatus::NumericalFailure, iterations),
    };

    for iter in 0..=settings.max_iter {
        let aty = a.transpose() * &y;
        let gtz = g.transpose() * &z;
        let rx = c + &aty + &gtz;
        let ry = a * &x - b;
        let rz = g * &x + &s - h;
        let gap = s.dot(&z);
        let pcost = c.dot(&x);
        let dcost = -b.dot(&y) - h.dot(&z);
        let pres = (ry.norm() / resy0).max(rz.norm() / resz0);
        let dres = rx.norm() / resx0;
        let relgap = if pcost < T::zero() {
            Some(gap / -pcost)
        } else if dcost > T::zero() {
            Some(gap / dcost)
        } else {
            None
        };

        let gap_measure = relgap.map_or(gap, |r| r.min(gap));
        let merit = (pres / feastol)
            .max(dres / feastol)
            .max(gap_measure / settings.opt_tol);
        if best.as_ref().is_none_or(|b: &Best<T>| merit < b.merit) {
            best = Some(Best {
                merit,
                x: x.clone(),
                dual_objective: dcost,
                gap,
                acceptable: pres <= feastol
                    && dres <= settings.reduced_tol
                    && gap_measure <= settings.reduced_tol,
            });
        }

        if pres <= feastol
            && dres <= feastol
            && (gap <= settings.opt_tol || relgap.is_some_and(|r| r <= settings.opt_tol))
        {
            return IpmResult {
                status: SolveStatus::Optimal,
                x: lift(&x),
                dual_objective: dcost,
                gap,
                iterations: iter,
            };
        }

        // Farkas-type certificates.
        let hz_by = h.dot(&z) + b.dot(&y);
        if hz_by < T::zero() && (&aty + &gtz).norm() <= feastol * -hz_by {
            return fail(SolveStatus::Infeasible, iter);
        }
        if pcost < T::zero() {
            let ax = (a * &x).norm();
            let gxs = (g * &x + &s).norm();
            if ax.max(gxs) <= feastol * -pcost {
                return fail(SolveStatus::Unbounded, iter);
            }
        }
        if iter == settings.max_iter {
            break;
        }

        let Some(scaling) = Scaling::compute(&cone, &s, &z) else {
            return stalled(best, iter);
        };
        let lambda = scaling.lambda.clone();
        let mu = gap / degree;

        let mut hinv_g = DMatrix::zeros(g.nrows(), nx);
        for j in 0..nx {
            let col = g.column(j).into_owned();
            hinv_g.set_column(j, &scaling.apply_hinv(&cone, &col));
        }
        let kkt = Kkt::factor(a, g, &hinv_g);

        // Returns (dx, dy, dz, ds, ds_scaled, dz_scaled) for a complementarity
        // right-hand side given as lambda \ rhs.
        // One pass of block elimination for
        //   A'dy + G'dz = r1,  A dx = r2,  G dx - W'W dz = r3.
        let eliminate = |r1: &DVector<T>, r2: &DVector<T>, r3: &DVector<T>| {
            let top = r1 + g.transpose() * scaling.apply_hinv(&cone, r3);
            let (dx, dy) = kkt.solve(&stack(top, r2))?;
            let dz = scaling.apply_hinv(&cone, &(g * &dx - r3));
            Some((dx, dy, dz))
        };
        // The reduced matrix G'(W'W)^{-1}G is formed inexactly once the scaling
        // is badly conditioned, so refine against the unreduced system.
        let solve_full = |r1: &DVector<T>, r2: &DVector<T>, r3: &DVector<T>| {
            let (mut dx, mut dy, mut dz) = eliminate(r1, r2, r3)?;
            let residual = |dx: &DVector<T>, dy: &DVector<T>, dz: &DVector<T>| {
                let e1 = r1 - a.transpose() * dy - g.transpose() * dz;
                let e2 = r2 - a * dx;
                let e3 = r3 - g * dx + scaling.apply_wt(&cone, &scaling.apply_w(&cone, dz));
                (e1, e2, e3)
            };
            let size = |e: &(DVector<T>, DVector<T>, DVector<T>)| {
                (e.0.norm() / resx0)
                    .max(e.1.norm() / resy0)
                    .max(e.2.norm() / resz0)
            };
            let mut err = residual(&dx, &dy, &dz);
            for _ in 0..REFINE_STEPS {
                let Some((cx, cy, cz)) = eliminate(&err.0, &err.1, &err.2) else {
                    break;
                };
                let (nx_, ny_, nz_) = (&dx + cx, &dy + cy, &dz + cz);
                let next = residual(&nx_, &ny_, &nz_);
                if size(&next) >= size(&err) {
                    break;
                }
                (dx, dy, dz, err) = (nx_, ny_, nz_, next);
            }
            Some((dx, dy, dz))
        };

        let newton = |comp_div: &DVector<T>| {
            let bz = -&rz - scaling.apply_wt(&cone, comp_div);
            let (dx, dy, dz) = solve_full(&-&rx, &-&ry, &bz)?;
            let dz_scaled = scaling.apply_w(&cone, &dz);
            let ds_scaled = comp_div - &dz_scaled;
            // Same as W' ds_scaled in exact arithmetic, without the cancellation.
            let ds = -&rz - g * &dx;
            Some((dx, dy, dz, ds, ds_scaled, dz_scaled))
        };

        // Predictor.
        let Some((_, _, dz_a, ds_a, dss_a, dzs_a)) = newton(&-&lambda) else {
            return stalled(best, iter);
        };
        let step_a = [cone.max_step(&s, &ds_a), cone.max_step(&z, &dz_a)]
            .into_iter()
            .flatten()
            .fold(T::one(), |acc, t| acc.min(t));
        let sigma = (T::one() - step_a).powi(EXPON);

        // Corrector.
        let comp = -cone.prod(&lambda, &lambda) - cone.prod(&dss_a, &dzs_a) + &e * (sigma * mu);
        let comp_div = scaling.lambda_div(&cone, &comp);
        let Some((dx, dy, dz, ds, _, _)) = newton(&comp_div) else {
            return stalled(best, iter);
        };
        let bound = [cone.max_step(&s, &ds), cone.max_step(&z, &dz)]
            .into_iter()
            .flatten()
            .reduce(|a, b| a.min(b));
        let alpha = match bound {
            Some(t) => (T::lit(STEP) * t).min(T::one()),
            None => T::one(),
        };
        if alpha <= T::lit(1e-14) {
            return stalled(best, iter);
        }
        x += dx * alpha;
        y += dy * alpha;
        s += ds * alpha;
        z += dz * alpha;
    }

    stalled(best, settings.max_iter)
}
