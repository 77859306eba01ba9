use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{field}`: {reason}")]
    InvalidValue { field: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot parse configuration: {0}")]
    Parse(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeploymentError {
    #[error("offset {index} lies {distance:.3} m from its AP, outside [{min}, {max}] m")]
    OffsetOutOfRange { index: usize, distance: f64, min: f64, max: f64 },
    #[error("expected {expected} STA offsets, got {got}")]
    OffsetCount { expected: usize, got: usize },
    #[error("unsupported topology: {0} APs (supported: 1, 2 or 4)")]
    UnsupportedTopology(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("packet count {n} outside [1, {max}]")]
    PacketCountOutOfRange { n: u32, max: u32 },
    #[error("malformed MCS table: {0}")]
    Table(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupingError {
    #[error("STA {sta} (AP {ap}) has no usable solo link")]
    UnusableLink { ap: usize, sta: usize },
    #[error("pair (AP {ap}, STA {sta}) is not in the plan")]
    PairNotFound { ap: usize, sta: usize },
    #[error("no feasible partition of the AP-STA pairs")]
    Infeasible,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MacError {
    #[error("unsupported scenario: APs {a} and {b} do not hear each other above CCA ({rssi:.2} dBm)")]
    NotAClique { a: usize, b: usize, rssi: f64 },
    #[error("plan does not match the deployment: {0}")]
    PlanMismatch(String),
    #[error("workload does not match the deployment: {0}")]
    WorkloadMismatch(String),
    #[error("link for STA {0} is unusable")]
    UnusableLink(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("cannot calibrate: STA {sta} (AP {ap}) has no usable link")]
    UnusableLink { ap: usize, sta: usize },
    #[error(transparent)]
    Mac(#[from] MacError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no delivered packets")]
    Empty,
    #[error("quantile must lie in (0, 1), got {0}")]
    BadQuantile(f64),
}
