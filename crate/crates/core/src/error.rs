use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("regression matrix is rank deficient")]
    RankDeficient,
    #[error("snapshot collection stalled after {attempts} attempts ({accepted} accepted)")]
    CollectionStalled { attempts: usize, accepted: usize },
    #[error("confidence parameter must lie in (0, 2), got {0}")]
    InvalidConfidence(f64),
    #[error("map is singular")]
    SingularMap,
    #[error("matrix is not Schur stable (spectral radius {0})")]
    NotSchur(f64),
    #[error("pair is not stabilizable")]
    NotStabilizable,
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("degenerate set: {0}")]
    Degenerate(String),
    #[error("feasible set is empty at stage {0}")]
    EmptyFeasibleSet(usize),
    #[error("optimization problem is infeasible")]
    Infeasible,
    #[error("iteration limit reached in {0}")]
    MaxIterations(&'static str),
    #[error("barrier evaluated on the boundary or outside its set")]
    BoundaryEvaluation,
    #[error("weight norm {0} exceeded the divergence cap")]
    DivergenceDetected(f64),
    #[error("neither learned nor backup plan is safe")]
    NoSafePolicy,
    #[error("design infeasible: {0}")]
    DesignInfeasible(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("serialization: {0}")]
    Serialization(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
