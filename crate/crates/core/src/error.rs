use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("tail integral diverges: {0}")]
    DivergentTailIntegral(String),

    #[error("invalid grid size: {0}")]
    InvalidSize(String),

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("direct convolution refused: {points} points exceeds the cost guard of {limit}")]
    TooLarge { points: usize, limit: usize },

    #[error("value {value} at node {index} lies outside the tube [0, {theta}]")]
    OutOfTube { index: usize, value: f64, theta: f64 },

    #[error("time step {dt} exceeds the stability bound {dt_max}")]
    StepTooLarge { dt: f64, dt_max: f64 },

    #[error("tube violation of {excess:e} at t = {time} after step-size retry")]
    TubeViolation { time: f64, excess: f64 },

    #[error("series truncation bound {bound:e} exceeds tolerance {tolerance:e}")]
    TruncationBoundExceeded { bound: f64, tolerance: f64 },

    #[error("domain expansion to half-width {requested} exceeds the cap {cap}")]
    MaxDomainExceeded { requested: f64, cap: f64 },

    #[error("level {level:e} is not below the tail start value {top:e}")]
    LevelAboveRange { level: f64, top: f64 },

    #[error("argument {0} is outside the W_-1 branch domain [-1/e, 0)")]
    OutOfBranchDomain(f64),

    #[error("t = {t} is below the validity threshold {threshold}")]
    BelowThreshold { t: f64, threshold: f64 },

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("insufficient data: {have} points after burn-in, need {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
