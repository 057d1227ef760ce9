use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid coefficient box: {0}")]
    InvalidBox(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "tolerance not met: requested {requested:e}, achieved {achieved:e} after {evaluations} evaluations"
    )]
    ToleranceNotMet {
        requested: f64,
        achieved: f64,
        evaluations: usize,
    },

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("non-finite state on path {path} at step {step}")]
    NonFiniteState { path: u64, step: u64 },

    #[error("control `{label}` is not admissible: {count} violation(s), worst excess {worst:e}")]
    Inadmissible {
        label: String,
        count: usize,
        worst: f64,
    },

    #[error("profile support cannot be certified: {0}")]
    UnboundedSupport(String),

    #[error(
        "time profile increases in t at y = {y}: f({t_early}, y) = {early} < f({t_late}, y) = {late}"
    )]
    MonotonicityViolation {
        y: f64,
        t_early: f64,
        t_late: f64,
        early: f64,
        late: f64,
    },

    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}
