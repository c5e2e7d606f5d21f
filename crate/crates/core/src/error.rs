use thiserror::Error;

/// Errors surfaced by population generation, sampling, estimation, and the
/// simulation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("frame generation gave up after {attempts} redraws: a cluster would be selected with certainty at Js={js}")]
    FrameResampleCap { attempts: usize, js: usize },

    #[error("certainty cluster: {0}")]
    CertaintyCluster(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("rank-deficient regression: {0}")]
    RankDeficient(String),

    #[error("rejection sampler stalled: {0}")]
    RejectionStalled(String),

    #[error("malformed file: {0}")]
    FileFormat(String),

    #[error("true mean is zero; relative metrics are undefined")]
    ZeroTruth,

    #[error("sampler did not converge: {0}")]
    NotConverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
