//! Small dense conic programs over matrix decision variables.
//!
//! A [`ConicProblem`] is assembled from matrix variables, affine matrix
//! expressions ([`AffineExpr`]) and constraints of three kinds: affine
//! equalities, elementwise nonnegativity and linear matrix inequalities
//! ([`PsdConstraint`]). Norm terms in the objective are compiled into
//! epigraph constraints, after which the problem is solved by a primal-dual
//! interior point method with Nesterov-Todd scaling.

mod compile;
mod ipm;
mod sdpa;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::min_sym_eigenvalue;
use crate::scalar::Real;
use crate::serde_matrix;

pub use compile::{ConeDims, StandardForm};
pub use sdpa::{export_problem, export_standard_form, SdpaProblem};

/// Margin used for strict LMIs.
pub const DEFAULT_LMI_MARGIN: f64 = 1e-10;

/// Handle to a declared matrix variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VarId {
    index: usize,
    rows: usize,
    cols: usize,
}

impl VarId {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarDecl {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
}

impl VarDecl {
    /// Number of scalar unknowns.
    pub fn scalar_count(&self) -> usize {
        if self.symmetric {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }
}

/// `scale * L * op(V) * R` where `op` is identity or transpose.
#[derive(Clone, Debug)]
struct Term<T: Real> {
    left: Option<DMatrix<T>>,
    var: VarId,
    transposed: bool,
    right: Option<DMatrix<T>>,
    scale: T,
}

impl<T: Real> Term<T> {
    fn view_shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.var.cols, self.var.rows)
        } else {
            (self.var.rows, self.var.cols)
        }
    }

    fn shape(&self) -> (usize, usize) {
        let (vr, vc) = self.view_shape();
        (
            self.left.as_ref().map_or(vr, |l| l.nrows()),
            self.right.as_ref().map_or(vc, |r| r.ncols()),
        )
    }

    fn evaluate(&self, value: &DMatrix<T>) -> DMatrix<T> {
        let mut v = if self.transposed {
            value.transpose()
        } else {
            value.clone()
        };
        if let Some(l) = &self.left {
            v = l * v;
        }
        if let Some(r) = &self.right {
            v *= r;
        }
        v * self.scale
    }
}

/// Matrix-valued expression affine in the decision variables.
#[derive(Clone, Debug)]
pub struct AffineExpr<T: Real> {
    rows: usize,
    cols: usize,
    constant: DMatrix<T>,
    terms: Vec<Term<T>>,
}

impl<T: Real> AffineExpr<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            constant: DMatrix::zeros(rows, cols),
            terms: Vec::new(),
        }
    }

    pub fn constant(m: DMatrix<T>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            constant: m,
            terms: Vec::new(),
        }
    }

    pub fn var(v: VarId) -> Self {
        Self {
            rows: v.rows,
            cols: v.cols,
            constant: DMatrix::zeros(v.rows, v.cols),
            terms: vec![Term {
                left: None,
                var: v,
                transposed: false,
                right: None,
                scale: T::one(),
            }],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// `m * self`. Panics on incompatible shapes.
    pub fn left_mul(mut self, m: &DMatrix<T>) -> Self {
        assert_eq!(m.ncols(), self.rows, "left factor has wrong column count");
        for t in &mut self.terms {
            t.left = Some(match t.left.take() {
                Some(l) => m * l,
                None => m.clone(),
            });
        }
        self.constant = m * &self.constant;
        self.rows = m.nrows();
        self
    }

    /// `self * m`. Panics on incompatible shapes.
    pub fn right_mul(mut self, m: &DMatrix<T>) -> Self {
        assert_eq!(m.nrows(), self.cols, "right factor has wrong row count");
        for t in &mut self.terms {
            t.right = Some(match t.right.take() {
                Some(r) => r * m,
                None => m.clone(),
            });
        }
        self.constant = &self.constant * m;
        self.cols = m.ncols();
        self
    }

    pub fn transpose(mut self) -> Self {
        for t in &mut self.terms {
            let l = t.left.take().map(|l| l.transpose());
            let r = t.right.take().map(|r| r.transpose());
            t.left = r;
            t.right = l;
            t.transposed = !t.transposed;
        }
        self.constant = self.constant.transpose();
        std::mem::swap(&mut self.rows, &mut self.cols);
        self
    }

    pub fn scale(mut self, s: T) -> Self {
        for t in &mut self.terms {
            t.scale *= s;
        }
        self.constant *= s;
        self
    }

    /// `self + other`. Panics on shape mismatch.
    pub fn plus(mut self, other: Self) -> Self {
        assert_eq!(
            self.shape(),
            other.shape(),
            "adding expressions of different shapes"
        );
        self.constant += other.constant;
        self.terms.extend(other.terms);
        self
    }

    pub fn minus(self, other: Self) -> Self {
        self.plus(other.scale(-T::one()))
    }

    pub fn plus_constant(mut self, m: &DMatrix<T>) -> Self {
        assert_eq!(m.shape(), self.shape(), "constant has wrong shape");
        self.constant += m;
        self
    }

    /// Numerical value for the given variable values (indexed by `VarId::index`).
    pub fn evaluate(&self, values: &[DMatrix<T>]) -> DMatrix<T> {
        let mut out = self.constant.clone();
        for t in &self.terms {
            out += t.evaluate(&values[t.var.index]);
        }
        out
    }
}

/// One block of a linear matrix inequality, placed at `(row, col)`.
///
/// Off-diagonal blocks are mirrored: the transpose of `expr` occupies
/// `(col, row)`.
#[derive(Clone, Debug)]
pub struct PsdBlock<T: Real> {
    pub row: usize,
    pub col: usize,
    pub expr: AffineExpr<T>,
}

/// `sum of blocks >= margin * I`.
#[derive(Clone, Debug)]
pub struct PsdConstraint<T: Real> {
    pub size: usize,
    pub blocks: Vec<PsdBlock<T>>,
    pub margin: T,
}

impl<T: Real> PsdConstraint<T> {
    pub fn new(size: usize, margin: T) -> Self {
        Self {
            size,
            blocks: Vec::new(),
            margin,
        }
    }

    /// `expr >= margin * I` for a square symmetric expression.
    pub fn single(expr: AffineExpr<T>, margin: T) -> Self {
        let size = expr.rows;
        Self::new(size, margin).with_block(0, 0, expr)
    }

    pub fn with_block(mut self, row: usize, col: usize, expr: AffineExpr<T>) -> Self {
        self.blocks.push(PsdBlock { row, col, expr });
        self
    }

    /// Assembled symmetric matrix (without the margin).
    pub fn assemble(&self, values: &[DMatrix<T>]) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.size, self.size);
        for b in &self.blocks {
            let v = b.expr.evaluate(values);
            let (r, c) = v.shape();
            m.view_mut((b.row, b.col), (r, c)).copy_from(&v);
            if b.row != b.col {
                m.view_mut((b.col, b.row), (c, r)).copy_from(&v.transpose());
            }
        }
        m
    }
}

/// Objective contributions; the objective is their sum and is minimized.
#[derive(Clone, Debug)]
pub enum ObjectiveTerm<T: Real> {
    /// `weight * trace(var)` for a square variable.
    Trace { var: VarId, weight: T },
    /// `sum_ij coeffs_ij * var_ij`.
    Inner { var: VarId, coeffs: DMatrix<T> },
    /// `weight * sum_ij |expr_ij|`.
    L1 { expr: AffineExpr<T>, weight: T },
    /// `weight * ||expr||_F`.
    Frobenius { expr: AffineExpr<T>, weight: T },
}

/// Dense conic program in matrix variables.
#[derive(Clone, Debug, Default)]
pub struct ConicProblem<T: Real> {
    vars: Vec<VarDecl>,
    objective: Vec<ObjectiveTerm<T>>,
    equalities: Vec<AffineExpr<T>>,
    nonnegatives: Vec<AffineExpr<T>>,
    psd: Vec<PsdConstraint<T>>,
}

impl<T: Real> ConicProblem<T> {
    pub fn new() -> Self {
        Self {
            vars: Vec::new(),
            objective: Vec::new(),
            equalities: Vec::new(),
            nonnegatives: Vec::new(),
            psd: Vec::new(),
        }
    }

    pub fn add_variable(&mut self, name: &str, rows: usize, cols: usize) -> VarId {
        self.declare(name, rows, cols, false)
    }

    pub fn add_symmetric(&mut self, name: &str, size: usize) -> VarId {
        self.declare(name, size, size, true)
    }

    fn declare(&mut self, name: &str, rows: usize, cols: usize, symmetric: bool) -> VarId {
        let index = self.vars.len();
        self.vars.push(VarDecl {
            name: name.to_string(),
            rows,
            cols,
            symmetric,
        });
        VarId { index, rows, cols }
    }

    pub fn minimize(&mut self, term: ObjectiveTerm<T>) {
        self.objective.push(term);
    }

    /// `expr == 0`.
    pub fn add_equality(&mut self, expr: AffineExpr<T>) {
        self.equalities.push(expr);
    }

    /// `expr >= 0` elementwise.
    pub fn add_nonnegative(&mut self, expr: AffineExpr<T>) {
        self.nonnegatives.push(expr);
    }

    pub fn add_psd(&mut self, c: PsdConstraint<T>) {
        self.psd.push(c);
    }

    pub fn variables(&self) -> &[VarDecl] {
        &self.vars
    }

    pub fn psd_constraints(&self) -> &[PsdConstraint<T>] {
        &self.psd
    }

    /// Structural checks run before any solve.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::MalformedProblem(msg));
        let mut names = std::collections::BTreeSet::new();
        for v in &self.vars {
            if !names.insert(v.name.as_str()) {
                return bad(format!("duplicate variable name `{}`", v.name));
            }
            if v.symmetric && v.rows != v.cols {
                return bad(format!("symmetric variable `{}` is not square", v.name));
            }
        }
        let check_var = |id: VarId| -> Result<()> {
            match self.vars.get(id.index) {
                Some(d) if d.rows == id.rows && d.cols == id.cols => Ok(()),
                _ => Err(Error::MalformedProblem(format!(
                    "reference to undeclared variable #{}",
                    id.index
                ))),
            }
        };
        let check_expr = |e: &AffineExpr<T>| -> Result<()> {
            for t in &e.terms {
                check_var(t.var)?;
                if t.shape() != e.shape() {
                    return Err(Error::MalformedProblem("inconsistent term shape".into()));
                }
            }
            Ok(())
        };
        for term in &self.objective {
            match term {
                ObjectiveTerm::Trace { var, weight } => {
                    check_var(*var)?;
                    if var.rows != var.cols {
                        return bad("trace of non-square variable".into());
                    }
                    if !weight.is_finite_value() {
                        return bad("non-finite objective weight".into());
                    }
                }
                ObjectiveTerm::Inner { var, coeffs } => {
                    check_var(*var)?;
                    if coeffs.shape() != var.shape() {
                        return bad("inner-product coefficients have wrong shape".into());
                    }
                }
                ObjectiveTerm::L1 { expr, weight } | ObjectiveTerm::Frobenius { expr, weight } => {
                    check_expr(expr)?;
                    if *weight < T::zero() || !weight.is_finite_value() {
                        return bad("norm weights must be finite and nonnegative".into());
                    }
                }
            }
        }
        for e in self.equalities.iter().chain(&self.nonnegatives) {
            check_expr(e)?;
        }
        for c in &self.psd {
            if c.margin < T::zero() || !c.margin.is_finite_value() {
                return bad("PSD margin must be finite and nonnegative".into());
            }
            if c.size == 0 {
                return bad("PSD constraint of size zero".into());
            }
            let mut cover = vec![false; c.size * c.size];
            for b in &c.blocks {
                check_expr(&b.expr)?;
                let (r, k) = b.expr.shape();
                if b.row + r > c.size || b.col + k > c.size {
                    return bad("PSD block exceeds constraint size".into());
                }
                if b.row == b.col && r != k {
                    return bad("diagonal PSD block is not square".into());
                }
                let mut mark = |i0: usize, j0: usize, rr: usize, cc: usize| -> Result<()> {
                    for i in i0..i0 + rr {
                        for j in j0..j0 + cc {
                            if std::mem::replace(&mut cover[i * c.size + j], true) {
                                return Err(Error::MalformedProblem(
                                    "overlapping PSD blocks".into(),
                                ));
                            }
                        }
                    }
                    Ok(())
                };
                mark(b.row, b.col, r, k)?;
                if b.row != b.col {
                    mark(b.col, b.row, k, r)?;
                }
            }
        }
        Ok(())
    }

    /// Lower to `min c'x  s.t.  A x = b,  h - G x in K`.
    pub fn to_standard_form(&self) -> Result<StandardForm<T>> {
        self.validate()?;
        Ok(compile::compile(self)?.form)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverSettings<T: Real> {
    pub feas_tol: T,
    pub opt_tol: T,
    /// Dual residual and gap accepted from the best iterate when progress
    /// stalls numerically. Primal feasibility must still meet `feas_tol`.
    pub reduced_tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for SolverSettings<T> {
    fn default() -> Self {
        Self {
            feas_tol: T::lit(1e-8),
            opt_tol: T::lit(1e-8),
            reduced_tol: T::lit(1e-6),
            max_iter: 100,
        }
    }
}

/// Result of [`solve`]. Residuals are recomputed from the original
/// expressions, independently of the solver iterates.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ConicSolution<T: Real> {
    pub status: SolveStatus,
    #[serde(with = "serde_matrix::map")]
    pub values: BTreeMap<String, DMatrix<T>>,
    pub objective_value: T,
    pub dual_objective: Option<T>,
    pub duality_gap: Option<T>,
    pub max_equality_residual: T,
    /// Smallest eigenvalue of `LMI(x) - margin * I` over all PSD constraints
    /// (and smallest entry over nonnegativity constraints).
    pub min_psd_eigenvalue: T,
    pub iterations: usize,
}

impl<T: Real> ConicSolution<T> {
    pub fn value(&self, name: &str) -> Option<&DMatrix<T>> {
        self.values.get(name)
    }
}

/// Solve a conic problem with the embedded interior point method.
pub fn solve<T: Real>(
    problem: &ConicProblem<T>,
    settings: &SolverSettings<T>,
) -> Result<ConicSolution<T>> {
    problem.validate()?;
    let compiled = compile::compile(problem)?;
    let res = ipm::solve_standard(&compiled.form, settings);

    let values = compiled.unpack(&res.x);
    let ordered: Vec<DMatrix<T>> = problem
        .vars
        .iter()
        .map(|v| values[&v.name].clone())
        .collect();

    let max_equality_residual = problem
        .equalities
        .iter()
        .map(|e| e.evaluate(&ordered).amax())
        .fold(T::zero(), |a, b| a.max(b));
    let psd_min = problem
        .psd
        .iter()
        .map(|c| min_sym_eigenvalue(&c.assemble(&ordered)) - c.margin);
    let nonneg_min = problem
        .nonnegatives
        .iter()
        .filter_map(|e| e.evaluate(&ordered).iter().copied().reduce(|a, b| a.min(b)));
    let min_psd_eigenvalue = psd_min
        .chain(nonneg_min)
        .reduce(|a, b| a.min(b))
        .unwrap_or_else(T::zero);

    let objective_value = compiled.form.c.dot(&res.x);
    let mut status = res.status;
    if status == SolveStatus::Optimal
        && (max_equality_residual > settings.feas_tol || min_psd_eigenvalue < -settings.feas_tol)
    {
        status = SolveStatus::NumericalFailure;
    }
    let optimal = status == SolveStatus::Optimal;
    Ok(ConicSolution {
        status,
        values,
        objective_value,
        dual_objective: optimal.then_some(res.dual_objective),
        duality_gap: optimal.then_some(res.gap),
        max_equality_residual,
        min_psd_eigenvalue,
        iterations: res.iterations,
    })
}
