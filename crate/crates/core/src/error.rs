use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
    #[error("unknown client {0}")]
    UnknownClient(u32),
    #[error("client {0} has no training data")]
    EmptyData(u32),
    #[error("no updates to aggregate")]
    EmptyUpdates,
    #[error("parameter length mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("total sample count of updates is zero")]
    ZeroWeight,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("infeasible partition: {0}")]
    InfeasiblePartition(&'static str),
    #[error("{have} fingerprints cannot form {need} clusters")]
    TooFewClients { have: usize, need: usize },
    #[error("no fingerprints to cluster")]
    NoFingerprints,
}
