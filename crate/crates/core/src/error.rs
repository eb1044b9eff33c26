use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("particles {i} and {j} are coincident (r = {r:.3e})")]
    CoincidentPair { i: usize, j: usize, r: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("step {step} failed: {source}")]
    StepFailed { step: usize, source: Box<Error> },
    #[error("sample {sample} failed: {source}")]
    SampleFailed { sample: usize, source: Box<Error> },
    #[error("config error: {0}")]
    Config(String),
    #[error("misuse: {0}")]
    Misuse(String),
    #[error("insufficient statistical power: {0}")]
    StatisticalPower(String),
    #[error("initial-state rejection budget exhausted after {attempts} attempts; use a larger box")]
    RejectionBudget { attempts: usize },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
