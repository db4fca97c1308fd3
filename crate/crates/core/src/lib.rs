//! Accelerated evaluation of automated-vehicle safety.
//!
//! An ego control policy is simulated against stochastic human-driver threat
//! maneuvers (car-following braking and cut-ins). Critical events are
//! oversampled with importance sampling, the proposal is tuned by the
//! cross-entropy method, and the weighted results are converted back into
//! real-world per-mile crash, injury and conflict rates.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dist;
pub mod error;
pub mod estimator;
pub mod fixtures;
pub mod ingest;
pub mod json;
pub mod normal;
mod optim;
pub mod policy;
pub mod report;
pub mod reversal;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod threat;

pub use dist::{fit_mle, fit_mle_weighted, DistributionSpec, FamilyTag, Support};
pub use error::{DistError, EstimateError, IngestError, ModelError, ReportError, SimError};
pub use policy::{aeb_overlay, idm_policy, AebOverlay, EgoPolicy, Idm, IdmParams, Observation};
pub use scenario::{
    detect_outcome, injury_probability, step_longitudinal, InjuryCurve, OutcomeEvent, SafetyThresholds, Trajectory,
    VehicleState,
};
pub use sim::{
    build_initial_scene, run_episode, sample_episode_params, EpisodeModel, EpisodeParams, EpisodeResult, SimConfig,
    SimEngine, ThresholdEvent,
};
pub use threat::{likelihood_ratio, ScenarioTag, ThreatModel};
