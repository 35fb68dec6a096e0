//! Controller synthesis from snapshot data.
//!
//! All paths look for a `T x n` pair of data weights: `Gx, Gr` directly
//! (exact and relaxed modes), or `Qx = Gx P, Qr = Gr P` together with a
//! Lyapunov matrix `P` (SDP modes). Gains are always read off through the
//! input snapshots, `K = U0 G`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{check_rank_condition, RankReport, SnapshotMatrices, DEFAULT_RANK_TOL};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{
    lstsq_min_norm, max_sym_eigenvalue, min_sym_eigenvalue, spd_solve, spectral_norm,
};
use crate::lti::{ControllerGains, ReferenceModel, StateSpaceModel};
use crate::scalar::Real;
use crate::sdp::{
    self, AffineExpr, ConicProblem, ObjectiveTerm, PsdConstraint, SolveStatus, SolverSettings,
    VarId, DEFAULT_LMI_MARGIN,
};
use crate::serde_matrix;

/// Relative residual above which the exact matching equations count as inconsistent.
pub const EXACT_RESIDUAL_TOL: f64 = 1e-6;

/// Relative eigenvalue floor for an acceptable Lyapunov matrix.
pub const P_CONDITION_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisMode {
    Exact,
    RelaxedUnstab,
    Sdp,
    AveragedSdp,
}

impl std::fmt::Display for SynthesisMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SynthesisMode::Exact => "exact",
            SynthesisMode::RelaxedUnstab => "relaxed_unstab",
            SynthesisMode::Sdp => "sdp",
            SynthesisMode::AveragedSdp => "averaged_sdp",
        })
    }
}

impl std::str::FromStr for SynthesisMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "relaxed_unstab" | "relaxed" => Ok(Self::RelaxedUnstab),
            "sdp" => Ok(Self::Sdp),
            "averaged_sdp" => Ok(Self::AveragedSdp),
            _ => Err(Error::InvalidParameter(format!(
                "unknown synthesis mode `{s}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchNorm {
    #[serde(alias = "L1")]
    L1,
    #[serde(alias = "fro")]
    Frobenius,
}

impl std::str::FromStr for MatchNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Self::L1),
            "fro" | "frobenius" => Ok(Self::Frobenius),
            _ => Err(Error::InvalidParameter(format!("unknown norm `{s}`"))),
        }
    }
}

impl std::fmt::Display for MatchNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MatchNorm::L1 => "l1",
            MatchNorm::Frobenius => "fro",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    pub mode: SynthesisMode,
    /// Weight of the feed-forward matching term.
    pub lambda: f64,
    /// Weight of the `trace(Z)` bound on `Qx P^{-1} Qx'`.
    pub lambda1: f64,
    /// Weight of the unit DC-gain penalty.
    pub dc_gain_weight: f64,
    pub norm: MatchNorm,
    pub lmi_margin: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            mode: SynthesisMode::Sdp,
            lambda: 1.0,
            lambda1: 0.0,
            dc_gain_weight: 0.0,
            norm: MatchNorm::L1,
            lmi_margin: DEFAULT_LMI_MARGIN,
        }
    }
}

impl SynthesisOptions {
    pub fn with_mode(mode: SynthesisMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be positive and finite");
        }
        if !(self.lambda1 >= 0.0) || !self.lambda1.is_finite() {
            return bad("lambda1 must be nonnegative and finite");
        }
        if !(self.dc_gain_weight >= 0.0) || !self.dc_gain_weight.is_finite() {
            return bad("dc_gain_weight must be nonnegative and finite");
        }
        if !(self.lmi_margin >= 0.0) || !self.lmi_margin.is_finite() {
            return bad("lmi_margin must be nonnegative and finite");
        }
        Ok(())
    }
}

/// Data retained for the noise-robust stability certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CertificateInputs<T: Real> {
    #[serde(with = "serde_matrix")]
    pub x1: DMatrix<T>,
    #[serde(with = "serde_matrix")]
    pub qx: DMatrix<T>,
    #[serde(with = "serde_matrix")]
    pub p: DMatrix<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SynthesisOutcome<T: Real> {
    pub mode: SynthesisMode,
    pub status: SolveStatus,
    pub gains: Option<ControllerGains<T>>,
    #[serde(with = "serde_matrix::option", default)]
    pub gx: Option<DMatrix<T>>,
    #[serde(with = "serde_matrix::option", default)]
    pub gr: Option<DMatrix<T>>,
    #[serde(with = "serde_matrix::option", default)]
    pub qx: Option<DMatrix<T>>,
    #[serde(with = "serde_matrix::option", default)]
    pub qr: Option<DMatrix<T>>,
    #[serde(with = "serde_matrix::option", default)]
    pub p: Option<DMatrix<T>>,
    pub objective_value: T,
    /// `||X1 Gx - A_M||_2` (with `Gx = Qx P^{-1}` in the SDP modes).
    pub residual_am: T,
    /// `||X1 Gr - B_M||_2`.
    pub residual_bm: T,
    /// Smallest eigenvalue of the Lyapunov LMI block matrix (SDP modes).
    pub lmi_min_eigenvalue: Option<T>,
    pub rank: RankReport,
    pub certificate_inputs: Option<CertificateInputs<T>>,
    pub solver_iterations: usize,
}

impl<T: Real> SynthesisOutcome<T> {
    pub fn is_success(&self) -> bool {
        self.status == SolveStatus::Optimal && self.gains.is_some()
    }

    fn failed(
        mode: SynthesisMode,
        status: SolveStatus,
        rank: RankReport,
        iterations: usize,
    ) -> Self {
        Self {
            mode,
            status,
            gains: None,
            gx: None,
            gr: None,
            qx: None,
            qr: None,
            p: None,
            objective_value: T::zero(),
            residual_am: T::zero(),
            residual_bm: T::zero(),
            lmi_min_eigenvalue: None,
            rank,
            certificate_inputs: None,
            solver_iterations: iterations,
        }
    }
}

fn check_reference<T: Real>(
    snap: &SnapshotMatrices<T>,
    reference: &ReferenceModel<T>,
) -> Result<()> {
    snap.validate()?;
    if reference.n() != snap.n() {
        return Err(dim_err("reference model order", snap.n(), reference.n()));
    }
    Ok(())
}

/// Run the synthesis path selected by `opts.mode`.
pub fn synthesize<T: Real>(
    snap: &SnapshotMatrices<T>,
    reference: &ReferenceModel<T>,
    opts: &SynthesisOptions,
) -> Result<SynthesisOutcome<T>> {
    match opts.mode {
        SynthesisMode::Exact => solve_exact(snap, reference),
        SynthesisMode::RelaxedUnstab => solve_relaxed(snap, reference, opts),
        SynthesisMode::Sdp | SynthesisMode::AveragedSdp => solve_sdp(snap, reference, opts),
    }
}

/// Solve `[X1; X0] [Gx Gr] = [[A_M, B_M], [I, 0]]` in the minimum-norm
/// least-squares sense and report infeasibility when the relative residual
/// exceeds [`EXACT_RESIDUAL_TOL`].
pub fn solve_exact<T: Real>(
    snap: &SnapshotMatrices<T>,
    reference: &ReferenceModel<T>,
) -> Result<SynthesisOutcome<T>> {
    check_reference(snap, reference)?;
    let n = snap.n();
    let tt = snap.horizon();
    let rank = check_rank_condition(snap, T::lit(DEFAULT_RANK_TOL));

    let mut lhs = DMatrix::zeros(2 * n, tt);
    lhs.rows_mut(0, n).copy_from(&snap.x1);
    lhs.rows_mut(n, n).copy_from(&snap.x0);
    let mut rhs = DMatrix::zeros(2 * n, 2 * n);
    rhs.view_mut((0, 0), (n, n)).copy_from(reference.a_m());
    rhs.view_mut((0, n), (n, n)).copy_from(reference.b_m());
    rhs.view_mut((n, 0), (n, n)).fill_with_identity();

    let g = lstsq_min_norm(&lhs, &rhs, T::lit(1e-12));
    let resid = (&lhs * &g - &rhs).norm() / rhs.norm().max(T::one());
    if !(resid <= T::lit(EXACT_RESIDUAL_TOL)) {
        return Ok(SynthesisOutcome::failed(
            SynthesisMode::Exact,
            SolveStatus::Infeasible,
            rank,
            0,
        ));
    }
    let gx = g.columns(0, n).into_owned();
    let gr = g.columns(n, n).into_owned();
    let gains = ControllerGains::new(&snap.u0 * &gx, &snap.u0 * &gr)?;
    Ok(SynthesisOutcome {
        mode: SynthesisMode::Exact,
        status: SolveStatus::Optimal,
        gains: Some(gains),
        residual_am: spectral_norm(&(&snap.x1 * &gx - reference.a_m())),
        residual_bm: spectral_norm(&(&snap.x1 * &gr - reference.b_m())),
        gx: Some(gx),
        gr: Some(gr),
        qx: None,
        qr: None,
        p: None,
        objective_value: resid,
        lmi_min_eigenvalue: None,
        rank,
        certificate_inputs: None,
        solver_iterations: 0,
    })
}

fn norm_term<T: Real>(norm: MatchNorm, expr: AffineExpr<T>, weight: T) -> ObjectiveTerm<T> {
    match norm {
        MatchNorm::L1 => ObjectiveTerm::L1 { expr, weight },
        MatchNorm::Frobenius => ObjectiveTerm::Frobenius { expr, weight },
    }
}

fn var_times<T: Real>(left: &DMatrix<T>, v: VarId) -> AffineExpr<T> {
    AffineExpr::var(v).left_mul(left)
}

/// Minimize `||X1 Gx - A_M|| + lambda ||X1 Gr - B_M||` subject to
/// `X0 Gx = I` and `X0 Gr = 0`. No stability guarantee.
pub fn solve_relaxed<T: Real>(
    snap: &SnapshotMatrices<T>,
    reference: &ReferenceModel<T>,
    opts: &SynthesisOptions,
) -> Result<SynthesisOutcome<T>> {
    opts.validate()?;
    check_reference(snap, reference)?;
    let n = snap.n();
    let tt = snap.horizon();
    let rank = check_rank_condition(snap, T::lit(DEFAULT_RANK_TOL));

    let mut prob = ConicProblem::new();
    let gx = prob.add_variable("Gx", tt, n);
    let gr = prob.add_variable("Gr", tt, n);
    prob.minimize(norm_term(
        opts.norm,
        var_times(&snap.x1, gx).plus_constant(&-reference.a_m()),
        T::one(),
    ));
    prob.minimize(norm_term(
        opts.norm,
        var_times(&snap.x1, gr).plus_constant(&-reference.b_m()),
        T::lit(opts.lambda),
    ));
    prob.add_equality(var_times(&snap.x0, gx).plus_constant(&-DMatrix::identity(n, n)));
    prob.add_equality(var_times(&snap.x0, gr));

    let sol = sdp::solve(&prob, &SolverSettings::default())?;
    if sol.status != SolveStatus::Optimal {
        return Ok(SynthesisOutcome::failed(
            SynthesisMode::RelaxedUnstab,
            sol.status,
            rank,
            sol.iterations,
        ));
    }
    let gxv = sol.values["Gx"].clone();
    let grv = sol.values["Gr"].clone();
    let gains = ControllerGains::new(&snap.u0 * &gxv, &snap.u0 * &grv)?;
    Ok(SynthesisOutcome {
        mode: SynthesisMode::RelaxedUnstab,
        status: SolveStatus::Optimal,
        gains: Some(gains),
        residual_am: spectral_norm(&(&snap.x1 * &gxv - reference.a_m())),
        residual_bm: spectral_norm(&(&snap.x1 * &grv - reference.b_m())),
        gx: Some(gxv),
        gr: Some(grv),
        qx: None,
        qr: None,
        p: None,
        objective_value: sol.objective_value,
        lmi_min_eigenvalue: None,
        rank,
        certificate_inputs: None,
        solver_iterations: sol.iterations,
    })
}

/// The Lyapunov-constrained matching program over `(Qx, Qr, P)`.
///
/// Exposed so that callers (and tests) can inspect or export the exact
/// problem that [`solve_sdp`] hands to the solver.
pub fn build_sdp_problem<T: Real>(
    snap: &SnapshotMatrices<T>,
    reference: &ReferenceModel<T>,
    opts: &SynthesisOptions,
) -> Result<ConicProblem<T>> {
    opts.validate()?;
    check_reference(snap, reference)?;
    let n = snap.n();
    let tt = snap.horizon();

    let mut prob = ConicProblem::new();
    let qx = prob.add_variable("Qx", tt, n);
    let qr = prob.add_variable("Qr", tt, n);
    let p = prob.add_symmetric("P", n);

    let x1qx = var_times(&snap.x1, qx);
    let x1qr = var_times(&snap.x1, qr);
    prob.minimize(norm_term(
        opts.norm,
        x1qx.clone().minus(var_times(reference.a_m(), p)),
        T::one(),
    ));
    prob.minimize(norm_term(
        opts.norm,
        x1qr.clone().minus(var_times(reference.b_m(), p)),
        T::lit(opts.lambda),
    ));
    if opts.dc_gain_weight > 0.0 {
        let dc = AffineExpr::var(p).minus(x1qx.clone()).minus(x1qr);
        prob.minimize(norm_term(opts.norm, dc, T::lit(opts.dc_gain_weight)));
    }

    prob.add_equality(var_times(&snap.x0, qx).minus(AffineExpr::var(p)));
    prob.add_equality(var_times(&snap.x0, qr));

    // [[P, X1 Qx], [(X1 Qx)', P]] >= margin I
    prob.add_psd(
        PsdConstraint::new(2 * n, T::lit(opts.lmi_margin))
            .with_block(0, 0, AffineExpr::var(p))
            .with_block(0, n, x1qx)
            .with_block(n, n, AffineExpr::var(p)),
    );

    if opts.lambda1 > 0.0 {
        // Z >= Qx P^{-1} Qx'  <=>  [[Z, Qx], [Qx', P]] >= 0
        let z = prob.add_symmetric("Z", tt);
        prob.minimize(ObjectiveTerm::Trace {
            var: z,
            weight: T::lit(opts.lambda1),
        });
        prob.add_psd(
            PsdConstraint::new(tt + n, T::zero())
                .with_block(0, 0, AffineExpr::var(z))
                .with_block(0, tt, AffineExpr::var(qx))
                .with_block(tt, tt, AffineExpr::var(p)),
        );
    }
    Ok(prob)
}

/// Lyapunov-constrained matching (single or averaged data).
pub fn solve_sdp<T: Real>(
    snap: &SnapshotMatrices<T>,
    reference: &ReferenceModel<T>,
    opts: &SynthesisOptions,
) -> Result<SynthesisOutcome<T>> {
    let mode = match opts.mode {
        SynthesisMode::Sdp | SynthesisMode::AveragedSdp => opts.mode,
        _ => SynthesisMode::Sdp,
    };
    let prob = build_sdp_problem(snap, reference, opts)?;
    let rank = check_rank_condition(snap, T::lit(DEFAULT_RANK_TOL));
    let sol = sdp::solve(&prob, &SolverSettings::default())?;
    if sol.status != SolveStatus::Optimal {
        return Ok(SynthesisOutcome::failed(
            mode,
            sol.status,
            rank,
            sol.iterations,
        ));
    }
    let qx = sol.values["Qx"].clone();
    let qr = sol.values["Qr"].clone();
    let p = sol.values["P"].clone();
    let gains = recover_gains(&qx, &qr, &p, &snap.u0)?;

    let x1qx = &snap.x1 * &qx;
    let lmi = crate::cert::lyapunov_lmi(&snap.x1, &qx, &p)?;

    // X1 Q P^{-1} = (P^{-1} (X1 Q)')'
    let a_cl = spd_solve(&p, &x1qx.transpose())?.transpose();
    let b_cl = spd_solve(&p, &(&snap.x1 * &qr).transpose())?.transpose();

    Ok(SynthesisOutcome {
        mode,
        status: SolveStatus::Optimal,
        gains: Some(gains),
        gx: None,
        gr: None,
        residual_am: spectral_norm(&(a_cl - reference.a_m())),
        residual_bm: spectral_norm(&(b_cl - reference.b_m())),
        certificate_inputs: Some(CertificateInputs {
            x1: snap.x1.clone(),
            qx: qx.clone(),
            p: p.clone(),
        }),
        qx: Some(qx),
        qr: Some(qr),
        p: Some(p),
        objective_value: sol.objective_value,
        lmi_min_eigenvalue: Some(min_sym_eigenvalue(&lmi)),
        rank,
        solver_iterations: sol.iterations,
    })
}

/// `K_x = U0 Qx P^{-1}`, `K_r = U0 Qr P^{-1}` via a Cholesky solve with `P`.
pub fn recover_gains<T: Real>(
    qx: &DMatrix<T>,
    qr: &DMatrix<T>,
    p: &DMatrix<T>,
    u0: &DMatrix<T>,
) -> Result<ControllerGains<T>> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::NotSquare("P".into()));
    }
    let tt = u0.ncols();
    for (name, q) in [("Qx", qx), ("Qr", qr)] {
        if q.shape() != (tt, n) {
            return Err(dim_err(
                name,
                format!("{tt}x{n}"),
                format!("{}x{}", q.nrows(), q.ncols()),
            ));
        }
    }
    let asym = (p - p.transpose()).amax();
    if asym > T::lit(1e-9) * p.amax().max(T::one()) {
        return Err(Error::InvalidParameter("P is not symmetric".into()));
    }
    let lmin = min_sym_eigenvalue(p);
    let lmax = max_sym_eigenvalue(p);
    if !(lmax > T::zero()) || !(lmin > T::lit(P_CONDITION_FLOOR) * lmax) {
        return Err(Error::IllConditioned(format!(
            "P eigenvalues span [{lmin:e}, {lmax:e}]"
        )));
    }
    let kx = spd_solve(p, &(u0 * qx).transpose())?.transpose();
    let kr = spd_solve(p, &(u0 * qr).transpose())?.transpose();
    ControllerGains::new(kx, kr)
}

/// Closed-loop matrices `(A_cl, B_cl)` expressed through data.
///
/// With `plant_a = None` the data are taken as noiseless: `(X1 Gx, X1 Gr)`.
/// Given the true `A`, the noise correction `W0 = A V0 - V1` is added:
/// `((X1 + W0) Gx, (X1 + W0) Gr)`, which needs the oracle noise blocks.
pub fn reconstruct_closed_loop<T: Real>(
    snap: &SnapshotMatrices<T>,
    gx: &DMatrix<T>,
    gr: &DMatrix<T>,
    plant_a: Option<&DMatrix<T>>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    snap.validate()?;
    let (n, tt) = (snap.n(), snap.horizon());
    for (name, g) in [("Gx", gx), ("Gr", gr)] {
        if g.nrows() != tt {
            return Err(dim_err(name, tt, g.nrows()));
        }
    }
    let x1 = match plant_a {
        None => snap.x1.clone(),
        Some(a) => {
            if a.shape() != (n, n) {
                return Err(dim_err(
                    "plant A",
                    format!("{n}x{n}"),
                    format!("{}x{}", a.nrows(), a.ncols()),
                ));
            }
            let (Some(v0), Some(v1)) = (&snap.v0, &snap.v1) else {
                return Err(Error::MissingOracle(
                    "closed-loop reconstruction needs V0 and V1".into(),
                ));
            };
            &snap.x1 + a * v0 - v1
        }
    };
    Ok((&x1 * gx, &x1 * gr))
}

/// Spectral-norm residuals of `A + B K_x = A_M` and `B K_r = B_M`.
pub fn verify_matching<T: Real>(
    model: &StateSpaceModel<T>,
    gains: &ControllerGains<T>,
    reference: &ReferenceModel<T>,
) -> Result<(T, T)> {
    gains.check_dims(model.m(), model.n())?;
    if reference.n() != model.n() {
        return Err(dim_err("reference model order", model.n(), reference.n()));
    }
    let res_a = spectral_norm(&(model.a() + model.b() * &gains.kx - reference.a_m()));
    let res_b = spectral_norm(&(model.b() * &gains.kr - reference.b_m()));
    Ok((res_a, res_b))
}
