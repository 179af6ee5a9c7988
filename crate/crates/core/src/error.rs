use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("track too short: need at least {need} samples, got {got}")]
    Length { need: usize, got: usize },
    #[error("numerical failure at frame {frame}: {msg}")]
    NumericalAtFrame { frame: i64, msg: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("vehicle {0} not present in snapshot")]
    Lookup(i64),
    #[error("degenerate training set: {0}")]
    DegenerateForest(String),
    #[error("model is not stabilisable: {0}")]
    RankDeficient(String),
    #[error("target outside road: {0}")]
    Bounds(String),
    #[error("ego outside the collision-free set (worst violation {violation:.3})")]
    InfeasibleEnvironment { violation: f64 },
    #[error("scenario error: {0}")]
    Scenario(String),
}
