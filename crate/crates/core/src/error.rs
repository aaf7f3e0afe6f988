use thiserror::Error;

/// Errors produced by the simulation engine and its satellite modules.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("undeclared status variable `{0}`")]
    UndeclaredVariable(String),

    #[error("undeclared parameter `{0}`")]
    UndeclaredParameter(String),

    #[error("duplicate status variable `{0}`")]
    DuplicateVariable(String),

    #[error("parameter vector mismatch: {0}")]
    ParameterMismatch(String),

    #[error("non-finite value for variable `{variable}` of individual {id}")]
    NonFinite { id: u64, variable: String },

    #[error("event `{event}` failed at step {step}: {source}")]
    EventFailed {
        step: u64,
        event: String,
        #[source]
        source: Box<SimError>,
    },

    #[error("event `{event}` modified dead individual {id} without declaring may_touch_dead")]
    DeadRowModified { event: String, id: u64 },

    #[error("accumulation event `{event}` generated {got} rows, expected {expected}")]
    BadAccumulationCount {
        event: String,
        expected: u64,
        got: u64,
    },

    #[error("duplicate individual id {0} while merging population chunks")]
    DuplicateId(u64),

    #[error("invalid distribution parameter: {0}")]
    BadDistribution(String),

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("non-positive entry `{key}` = {value} in log-scale objective")]
    NonPositiveTarget { key: String, value: f64 },

    #[error("objective not finite at the initial point")]
    NonFiniteObjective,

    #[error("optimizer did not converge: {0}")]
    NoConvergence(String),

    #[error("sampling design error: {0}")]
    BadDesign(String),

    #[error("logistic regression failed: {0}")]
    LogisticFailure(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, SimError>;
