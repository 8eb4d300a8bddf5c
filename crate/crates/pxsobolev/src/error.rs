use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),

    #[error("invalid exponent field: {0}")]
    InvalidExponent(String),

    #[error("exponent conjugacy violated: max |1/s - 1/p - 1/q| = {0:.3e}")]
    ConjugacyViolation(f64),

    #[error("Luxemburg bisection failed to bracket, last bracket [{lo:.3e}, {hi:.3e}]")]
    BracketFailure { lo: f64, hi: f64 },

    #[error("radial tail does not converge: fitted decay exponent {alpha:.4} needs > {needed:.4}")]
    NonconvergentTail { alpha: f64, needed: f64 },

    #[error("design matrix ill-conditioned (cond = {0:.3e}); widen the shell spread")]
    IllConditioned(f64),

    #[error("admissible r_eps window is empty: lo = {lo:.4e} >= hi = {hi:.4e}")]
    EmptyWindow { lo: f64, hi: f64 },

    #[error("grid too coarse: {nodes_across_core} nodes across the bubble core (need >= 8)")]
    CoreUnresolved { nodes_across_core: usize },

    #[error("moment divergence: p(infinity) = {p_inf} >= sqrt(N) = {sqrt_n}")]
    MomentDivergence { p_inf: f64, sqrt_n: f64 },

    #[error("regression rank-deficient: {0}")]
    RankDeficient(String),

    #[error("missing Sobolev estimate for {0}")]
    MissingEstimate(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no interior maximum of the fiber map on the t grid (after one extension)")]
    NoInteriorMax,

    #[error("descent diverged: {0}")]
    Divergence(String),

    #[error("scenario config invalid:\n{}", .0.join("\n"))]
    ConfigValidation(Vec<String>),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
