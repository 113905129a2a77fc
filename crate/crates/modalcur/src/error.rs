use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("mesh too coarse: {0}")]
    MeshTooCoarse(String),

    #[error("eigen-solver failed to converge: {0}")]
    EigenNonConvergence(String),

    #[error("malformed modal data: {0}")]
    MalformedModalData(String),

    #[error("invalid sensor configuration: {0}")]
    InvalidSensorConfig(String),

    #[error("invalid level: {0}")]
    InvalidLevel(String),

    #[error("degenerate sensor covariance (condition number exceeds {0:.1e})")]
    DegenerateCovariance(f64),

    #[error("episode finished")]
    EpisodeFinished,

    #[error("no free cells available for mutation")]
    NoFreeCells,

    #[error("mode shapes rank deficient on candidate set")]
    RankDeficientModes,

    #[error("mode unobservable at configuration (mode {0})")]
    UnobservableMode(usize),

    #[error("combinatorial budget exceeded: {0} configurations > {1}")]
    BudgetExceeded(u128, u128),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite loss encountered during update {0}")]
    NonFiniteLoss(usize),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
