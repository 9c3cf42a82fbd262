use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("h transform is singular at v = 1")]
    Singularity,

    #[error("not a probability vector: {0}")]
    InvalidSimplex(String),

    #[error("gamma = 0 has no confidence thresholds (phi is constant)")]
    Degenerate,

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("empty dataset")]
    EmptyData,

    #[error("expected {expected} scores, found {found}")]
    ScoreKind { expected: &'static str, found: &'static str },

    #[error("non-finite training loss at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}
