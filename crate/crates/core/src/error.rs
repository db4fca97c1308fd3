use thiserror::Error;

/// Errors raised by distribution construction, tilting and fitting.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("invalid distribution parameters: {0}")]
    InvalidParams(String),
    #[error("{family} cannot be exponentially tilted in-family; supply a replacement proposal distribution")]
    UnsupportedTilt { family: &'static str },
    #[error("tilt by {theta} leaves {family} outside its valid parameter range")]
    InvalidTilt { family: &'static str, theta: f64 },
    #[error("fit failed: {0}")]
    Fit(String),
}

/// Errors raised when pairing or validating threat models.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("scenario mismatch: {0}")]
    ScenarioMismatch(String),
    #[error("variable schema mismatch: {0}")]
    Schema(String),
    #[error("proposal is not absolutely continuous w.r.t. natural model for variable `{variable}`: {detail}")]
    AbsoluteContinuity { variable: String, detail: String },
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("model json: {0}")]
    Json(String),
}

/// Errors from the simulation engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid vehicle state: {0}")]
    InvalidState(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("policy `{policy_id}` produced a non-finite command at t={t}")]
    PolicyFault { policy_id: String, t: f64 },
    #[error("horizon {horizon}s at dt {dt}s exceeds the step limit")]
    StepOverflow { horizon: f64, dt: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Errors from the estimation layer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("every episode was invalid ({0} excluded)")]
    AllInvalid(usize),
    #[error("effective sample size undefined: all weights are zero")]
    ZeroWeights,
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("exact enumeration unavailable: {0}")]
    Enumeration(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Errors from log ingestion, event extraction and model building.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("invalid log: {0}")]
    InvalidLog(String),
    #[error("need at least {needed} {kind} events, got {got}")]
    TooFewEvents { kind: &'static str, needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("fitting `{variable}`: {source}")]
    Fit { variable: String, source: DistError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Errors from report rendering and parsing.
#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}
