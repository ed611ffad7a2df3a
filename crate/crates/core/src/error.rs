use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid range for `{name}`: min {min} > max {max}")]
    InvalidRange {
        name: &'static str,
        min: f64,
        max: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("kernel inversion did not converge in dimension {dim} of block {block}")]
    InversionFailed { block: usize, dim: usize },

    #[error("point covariance is rank deficient; supply more non-collinear points")]
    RankDeficient,

    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),

    #[error("field is not finite at grid corner ({i}, {j}, {k})")]
    NonFiniteField { i: usize, j: usize, k: usize },

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
}
