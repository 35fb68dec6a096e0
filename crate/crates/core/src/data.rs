//! Snapshot matrices built from experiment records, their averages over
//! repeated experiments, and data-richness checks.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::numerical_rank;
use crate::lti::ExperimentRecord;
use crate::scalar::Real;
use crate::serde_matrix;

/// Default relative tolerance for numerical rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Input/state data arranged column-wise over an experiment window.
///
/// `u0` holds `u(0..T-1)`, `x0` holds `x(0..T-1)` and `x1` holds `x(1..T)`.
/// The optional blocks carry simulation oracle data: `v0`/`v1` are the
/// noise counterparts of `x0`/`x1` and `x0_clean`/`x1_clean` the noiseless
/// states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SnapshotMatrices<T: Real> {
    #[serde(rename = "U0", with = "serde_matrix")]
    pub u0: DMatrix<T>,
    #[serde(rename = "X0", with = "serde_matrix")]
    pub x0: DMatrix<T>,
    #[serde(rename = "X1", with = "serde_matrix")]
    pub x1: DMatrix<T>,
    #[serde(
        rename = "V0",
        with = "serde_matrix::option",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub v0: Option<DMatrix<T>>,
    #[serde(
        rename = "V1",
        with = "serde_matrix::option",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub v1: Option<DMatrix<T>>,
    #[serde(
        rename = "X0_clean",
        with = "serde_matrix::option",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub x0_clean: Option<DMatrix<T>>,
    #[serde(
        rename = "X1_clean",
        with = "serde_matrix::option",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub x1_clean: Option<DMatrix<T>>,
}

impl<T: Real> SnapshotMatrices<T> {
    /// Measurement-only snapshots.
    pub fn new(u0: DMatrix<T>, x0: DMatrix<T>, x1: DMatrix<T>) -> Result<Self> {
        let s = Self {
            u0,
            x0,
            x1,
            v0: None,
            v1: None,
            x0_clean: None,
            x1_clean: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn horizon(&self) -> usize {
        self.u0.ncols()
    }

    pub fn n(&self) -> usize {
        self.x0.nrows()
    }

    pub fn m(&self) -> usize {
        self.u0.nrows()
    }

    pub fn has_noise_blocks(&self) -> bool {
        self.v0.is_some() && self.v1.is_some()
    }

    /// Stacked `[U0; X0]`.
    pub fn stacked(&self) -> DMatrix<T> {
        let (m, n, t) = (self.m(), self.n(), self.horizon());
        let mut s = DMatrix::zeros(m + n, t);
        s.rows_mut(0, m).copy_from(&self.u0);
        s.rows_mut(m, n).copy_from(&self.x0);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.horizon();
        let n = self.n();
        if self.x0.ncols() != t {
            return Err(dim_err("X0 columns", t, self.x0.ncols()));
        }
        if self.x1.shape() != (n, t) {
            return Err(dim_err(
                "X1 shape",
                format!("{n}x{t}"),
                format!("{}x{}", self.x1.nrows(), self.x1.ncols()),
            ));
        }
        for (name, blk) in [
            ("V0", &self.v0),
            ("V1", &self.v1),
            ("X0_clean", &self.x0_clean),
            ("X1_clean", &self.x1_clean),
        ] {
            if let Some(b) = blk {
                if b.shape() != (n, t) {
                    return Err(dim_err(
                        name,
                        format!("{n}x{t}"),
                        format!("{}x{}", b.nrows(), b.ncols()),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Copy with oracle blocks removed.
    pub fn without_oracle(&self) -> Self {
        Self {
            v0: None,
            v1: None,
            x0_clean: None,
            x1_clean: None,
            ..self.clone()
        }
    }

    fn blocks_mut(&mut self) -> [&mut DMatrix<T>; 3] {
        [&mut self.u0, &mut self.x0, &mut self.x1]
    }
}

/// Slice an experiment record into snapshot matrices.
pub fn build_snapshots<T: Real>(record: &ExperimentRecord<T>) -> Result<SnapshotMatrices<T>> {
    record.validate()?;
    let t = record.horizon();
    if t == 0 {
        return Err(Error::Empty("experiment record".into()));
    }
    let xs = &record.states_measured;
    let head = |m: &DMatrix<T>| m.columns(0, t).into_owned();
    let tail = |m: &DMatrix<T>| m.columns(1, t).into_owned();
    Ok(SnapshotMatrices {
        u0: record.inputs.clone(),
        x0: head(xs),
        x1: tail(xs),
        v0: record.noise.as_ref().map(head),
        v1: record.noise.as_ref().map(tail),
        x0_clean: record.states_clean.as_ref().map(head),
        x1_clean: record.states_clean.as_ref().map(tail),
    })
}

/// Blockwise arithmetic mean of a list of snapshot matrices.
///
/// Optional blocks are averaged only when every member carries them.
pub fn average_snapshots<T: Real>(list: &[SnapshotMatrices<T>]) -> Result<SnapshotMatrices<T>> {
    let first = list
        .first()
        .ok_or_else(|| Error::Empty("snapshot list".into()))?;
    first.validate()?;
    for s in &list[1..] {
        if s.u0.shape() != first.u0.shape() || s.x0.shape() != first.x0.shape() {
            return Err(dim_err(
                "averaged snapshots",
                format!(
                    "{}x{} / {}x{}",
                    first.m(),
                    first.horizon(),
                    first.n(),
                    first.horizon()
                ),
                format!("{}x{} / {}x{}", s.m(), s.horizon(), s.n(), s.horizon()),
            ));
        }
        s.validate()?;
    }

    let mut out = first.clone();
    for s in &list[1..] {
        out.u0 += &s.u0;
        out.x0 += &s.x0;
        out.x1 += &s.x1;
    }
    let inv = T::one() / T::from_count(list.len());
    if list.len() > 1 {
        for b in out.blocks_mut() {
            *b *= inv;
        }
    }

    let mean_optional = |pick: fn(&SnapshotMatrices<T>) -> &Option<DMatrix<T>>| {
        let mut acc: Option<DMatrix<T>> = pick(first).clone();
        for s in &list[1..] {
            match (acc.as_mut(), pick(s)) {
                (Some(a), Some(b)) => *a += b,
                _ => return None,
            }
        }
        if list.len() > 1 {
            acc.map(|a| a * inv)
        } else {
            acc
        }
    };
    out.v0 = mean_optional(|s| &s.v0);
    out.v1 = mean_optional(|s| &s.v1);
    out.x0_clean = mean_optional(|s| &s.x0_clean);
    out.x1_clean = mean_optional(|s| &s.x1_clean);
    Ok(out)
}

/// Outcome of the rank test on `[U0; X0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub stacked_rank: usize,
    pub required: usize,
    pub singular_values: Vec<f64>,
    pub satisfied: bool,
}

/// Numerical rank of `[U0; X0]` against the required `n + m`.
pub fn check_rank_condition<T: Real>(snap: &SnapshotMatrices<T>, rel_tol: T) -> RankReport {
    let required = snap.n() + snap.m();
    let (rank, sv) = numerical_rank(&snap.stacked(), rel_tol);
    RankReport {
        stacked_rank: rank,
        required,
        singular_values: sv.into_iter().map(Real::to_f64_lossy).collect(),
        satisfied: rank == required,
    }
}

/// Block-Hankel matrix of depth `order` from an `m x T` sequence.
pub fn block_hankel<T: Real>(inputs: &DMatrix<T>, order: usize) -> Result<DMatrix<T>> {
    let (m, t) = inputs.shape();
    if order == 0 {
        return Err(Error::InvalidParameter(
            "excitation order must be >= 1".into(),
        ));
    }
    if order > t {
        return Err(Error::InvalidParameter(format!(
            "excitation order {order} exceeds sequence length {t}"
        )));
    }
    let cols = t - order + 1;
    let mut h = DMatrix::zeros(m * order, cols);
    for i in 0..order {
        h.rows_mut(i * m, m).copy_from(&inputs.columns(i, cols));
    }
    Ok(h)
}

/// True iff the depth-`order` block-Hankel matrix of `inputs` has full row
/// rank `m * order` (rank threshold as in [`check_rank_condition`]).
pub fn check_persistent_excitation<T: Real>(
    inputs: &DMatrix<T>,
    order: usize,
    rel_tol: T,
) -> Result<bool> {
    let h = block_hankel(inputs, order)?;
    let (rank, _) = numerical_rank(&h, rel_tol);
    Ok(rank == h.nrows())
}
