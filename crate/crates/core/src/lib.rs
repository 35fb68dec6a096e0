//! Data-driven model-reference control.
//!
//! Static state-feedback and feed-forward gains `u = K_x x + K_r r` are
//! designed from input/state snapshots of an unknown discrete-time LTI plant
//! so that the closed loop matches a given reference model. The numerical
//! core is generic over [`Real`] (`f32` or `f64`); `*F64` aliases cover the
//! common case.

pub mod cert;
pub mod data;
pub mod error;
pub mod io;
pub mod linalg;
pub mod lti;
pub mod scalar;
pub mod sdp;
pub mod serde_matrix;
pub mod synthesis;

pub use cert::{
    check_lyapunov, check_noise_energy, compute_alpha_beta, gaussian_average_bound, lmi_holds,
    lyapunov_inequality_holds, lyapunov_lmi, noise_robust_certificate, LyapunovMargins,
    NoiseEnergyReport, StabilityCertificate,
};
pub use data::{
    average_snapshots, build_snapshots, check_persistent_excitation, check_rank_condition,
    RankReport, SnapshotMatrices,
};
pub use error::{Error, Result};
pub use lti::{
    dc_gain, reference_response, simulate_closed_loop, simulate_open_loop, ControllerGains,
    ExperimentRecord, NoiseSpec, ReferenceModel, StateSpaceModel,
};
pub use scalar::Real;
pub use sdp::{ConicProblem, ConicSolution, SolveStatus, SolverSettings};
pub use synthesis::{
    reconstruct_closed_loop, recover_gains, solve_exact, solve_relaxed, solve_sdp, synthesize,
    verify_matching, MatchNorm, SynthesisMode, SynthesisOptions, SynthesisOutcome,
};

pub type StateSpaceModelF64 = StateSpaceModel<f64>;
pub type ReferenceModelF64 = ReferenceModel<f64>;
pub type ControllerGainsF64 = ControllerGains<f64>;
pub type ExperimentRecordF64 = ExperimentRecord<f64>;
pub type SnapshotMatricesF64 = SnapshotMatrices<f64>;
pub type SynthesisOutcomeF64 = SynthesisOutcome<f64>;
pub type StabilityCertificateF64 = StabilityCertificate<f64>;
pub type StateSpaceModelF32 = StateSpaceModel<f32>;
pub type ReferenceModelF32 = ReferenceModel<f32>;
pub type SnapshotMatricesF32 = SnapshotMatrices<f32>;
