use ddmatch::sdp::DEFAULT_LMI_MARGIN;
use ddmatch::{
    ControllerGains, Error, ReferenceModel, Result, StateSpaceModel, SynthesisMode,
    SynthesisOptions,
};
use nalgebra::{dmatrix, DMatrix};
use serde::{Deserialize, Serialize};

/// How the excitation of each experiment is produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputLaw {
    /// Plant inputs drawn uniformly from `[lo, hi)`.
    OpenLoopUniform { lo: f64, hi: f64 },
    /// Plant in feedback with a stabilizing pre-controller; the references
    /// are drawn uniformly from `[lo, hi)`.
    ClosedLoop {
        pre_controller: ControllerGains<f64>,
        lo: f64,
        hi: f64,
    },
}

impl InputLaw {
    fn bounds(&self) -> (f64, f64) {
        match *self {
            InputLaw::OpenLoopUniform { lo, hi } | InputLaw::ClosedLoop { lo, hi, .. } => (lo, hi),
        }
    }
}

/// Piecewise-constant reference used for the tracking traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingProfile {
    /// Levels visited in order, applied to every channel at once.
    pub levels: Vec<f64>,
    /// Samples spent at each level.
    pub hold: usize,
}

impl Default for TrackingProfile {
    fn default() -> Self {
        Self {
            levels: vec![1.0, -0.5, 2.0],
            hold: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub plant: StateSpaceModel<f64>,
    pub ref_model: ReferenceModel<f64>,
    /// Ground-truth matching gains.
    pub optimal_gains: ControllerGains<f64>,
    /// Samples per experiment.
    pub horizon: usize,
    /// Numbers of averaged experiments; smaller counts reuse a prefix of the
    /// experiments of larger ones.
    pub experiment_counts: Vec<usize>,
    /// Requested average SNR over the state channels, in dB; `inf` means
    /// noiseless.
    #[serde(with = "crate::serde_float::vec")]
    pub snr_targets_db: Vec<f64>,
    pub runs: usize,
    pub input_law: InputLaw,
    pub seed: u64,
    /// Reuse one excitation across the experiments of a run. When false every
    /// experiment draws its own.
    #[serde(default = "default_true")]
    pub repeated_inputs: bool,
    #[serde(default = "benchmark_options")]
    pub synthesis: SynthesisOptions,
    #[serde(default)]
    pub tracking: TrackingProfile,
}

fn default_true() -> bool {
    true
}

/// Averaged SDP with `lambda = 1`, L1 matching and the default LMI margin.
pub fn benchmark_options() -> SynthesisOptions {
    SynthesisOptions {
        mode: SynthesisMode::AveragedSdp,
        lambda: 1.0,
        lmi_margin: DEFAULT_LMI_MARGIN,
        ..SynthesisOptions::default()
    }
}

pub const DESK_RUNS: usize = 20;
pub const DESK_EXPERIMENT_COUNTS: [usize; 4] = [1, 2, 10, 100];
pub const DESK_SNR_TARGETS_DB: [f64; 6] = [5.0, 7.7, 12.5, 15.9, 20.0, 30.0];
pub const FULL_RUNS: usize = 100;
pub const FULL_EXPERIMENT_COUNTS: [usize; 5] = [1, 2, 10, 100, 1000];
pub const FULL_SNR_TARGETS_DB: [f64; 14] = [
    3.0, 5.0, 8.0, 11.0, 14.0, 17.0, 20.0, 25.0, 30.0, 40.0, 50.0, 60.0, 80.0, 100.0,
];

impl ScenarioConfig {
    pub fn n(&self) -> usize {
        self.plant.n()
    }

    pub fn m(&self) -> usize {
        self.plant.m()
    }

    pub fn max_experiments(&self) -> usize {
        self.experiment_counts.iter().copied().max().unwrap_or(0)
    }

    /// The long sweep: 100 runs, up to 1000 experiments, SNR from 3 to 100 dB.
    pub fn full_scale(mut self) -> Self {
        self.runs = FULL_RUNS;
        self.experiment_counts = FULL_EXPERIMENT_COUNTS.to_vec();
        self.snr_targets_db = FULL_SNR_TARGETS_DB.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        let (n, m) = (self.n(), self.m());
        if self.ref_model.n() != n {
            return bad(format!(
                "reference model has order {}, plant has {n}",
                self.ref_model.n()
            ));
        }
        let g = &self.optimal_gains;
        if g.kx.shape() != (m, n) || g.kr.shape() != (m, n) {
            return bad(format!("optimal gains must be {m}x{n}"));
        }
        if self.horizon < n + m {
            return bad(format!(
                "horizon {} is shorter than n + m = {}",
                self.horizon,
                n + m
            ));
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.experiment_counts.is_empty() || self.experiment_counts.contains(&0) {
            return bad("experiment counts must be a nonempty list of positive integers".into());
        }
        if self.snr_targets_db.is_empty() || self.snr_targets_db.iter().any(|s| s.is_nan()) {
            return bad("snr targets must be a nonempty list of numbers".into());
        }
        let (lo, hi) = self.input_law.bounds();
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return bad(format!("excitation range [{lo}, {hi}) is empty"));
        }
        if let InputLaw::ClosedLoop { pre_controller, .. } = &self.input_law {
            if pre_controller.kx.shape() != (m, n) || pre_controller.kr.shape() != (m, n) {
                return bad(format!("pre-controller gains must be {m}x{n}"));
            }
        }
        if self.tracking.levels.is_empty() || self.tracking.hold == 0 {
            return bad("tracking profile needs at least one level and a positive hold".into());
        }
        self.synthesis.validate()
    }
}

fn stable_plant() -> StateSpaceModel<f64> {
    StateSpaceModel::new(
        dmatrix![
            0.1344, 0.2155, -0.1084;
            0.4585, 0.0797, 0.0857;
            -0.5647, -0.3269, 0.8946
        ],
        dmatrix![
            0.9298, 0.9143, -0.7162;
            -0.6848, -0.0292, -0.1565;
            0.9412, 0.6006, 0.8315
        ],
    )
    .expect("built-in plant is well formed")
}

fn stable_gains() -> ControllerGains<f64> {
    ControllerGains::new(
        dmatrix![
            0.6308, -0.2920, 0.3080;
            -0.3814, 0.4011, -0.7166;
            0.2405, 0.4340, -0.6664
        ],
        dmatrix![
            0.0768, -1.3126, -0.1809;
            0.4654, 1.5957, 0.7012;
            -0.4231, 0.3332, 0.6604
        ],
    )
    .expect("built-in gains are well formed")
}

fn unstable_plant() -> StateSpaceModel<f64> {
    StateSpaceModel::new(
        dmatrix![
            1.01, 0.01, 0.0;
            0.01, 1.01, 0.01;
            0.0, 0.01, 1.01
        ],
        DMatrix::identity(3, 3),
    )
    .expect("built-in plant is well formed")
}

fn unstable_gains() -> ControllerGains<f64> {
    ControllerGains::new(
        dmatrix![
            -0.11, -0.01, 0.0;
            -0.01, -0.11, -0.01;
            0.0, -0.01, -0.11
        ],
        DMatrix::identity(3, 3) * 0.1,
    )
    .expect("built-in gains are well formed")
}

/// The open-loop stable and the open-loop unstable benchmark, at desk scale.
pub fn builtin_scenarios() -> (ScenarioConfig, ScenarioConfig) {
    let stable = ScenarioConfig {
        name: "stable".into(),
        plant: stable_plant(),
        ref_model: ReferenceModel::scaled_identity(3, 0.2, 0.8).expect("stable reference"),
        optimal_gains: stable_gains(),
        horizon: 30,
        experiment_counts: DESK_EXPERIMENT_COUNTS.to_vec(),
        snr_targets_db: DESK_SNR_TARGETS_DB.to_vec(),
        runs: DESK_RUNS,
        input_law: InputLaw::OpenLoopUniform { lo: -2.0, hi: 2.0 },
        seed: 11,
        repeated_inputs: true,
        synthesis: benchmark_options(),
        tracking: TrackingProfile::default(),
    };
    let unstable = ScenarioConfig {
        name: "unstable".into(),
        plant: unstable_plant(),
        ref_model: ReferenceModel::scaled_identity(3, 0.9, 0.1).expect("stable reference"),
        optimal_gains: unstable_gains(),
        input_law: InputLaw::ClosedLoop {
            pre_controller: ControllerGains::new(-DMatrix::identity(3, 3), DMatrix::identity(3, 3))
                .expect("pre-controller"),
            lo: -5.0,
            hi: 10.0,
        },
        seed: 12,
        ..stable.clone()
    };
    (stable, unstable)
}
