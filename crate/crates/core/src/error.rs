use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid environment law: {0}")]
    InvalidLaw(String),

    #[error("unknown environment kind `{0}`")]
    UnknownKind(String),

    #[error("layer window [{needed_lo}, {needed_hi}] is not covered by the environment window [{have_lo}, {have_hi}]")]
    WindowTooSmall {
        needed_lo: i64,
        needed_hi: i64,
        have_lo: i64,
        have_hi: i64,
    },

    #[error("singular system at layer {layer}: condition estimate {condition:e}")]
    SingularSystem { layer: i64, condition: f64 },

    #[error("{what} did not converge within depth {depth}")]
    NoConvergence { what: &'static str, depth: usize },

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("divergent series after {terms} terms (term ratio stayed near 1)")]
    DivergentSeries { terms: usize },

    #[error("composition enumeration too large: {count} compositions")]
    TooLarge { count: u128 },

    #[error("matrix is not contractive (spectral radius estimate {estimate})")]
    NonContractive { estimate: f64 },

    #[error("walk left the environment window at layer {layer} (trial {trial:?})")]
    WindowExit { layer: i64, trial: Option<u64> },

    #[error("trajectory did not reach layer 1")]
    IncompleteTrajectory,

    #[error("velocity is not positive ({0})")]
    ZeroVelocity(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),
}
