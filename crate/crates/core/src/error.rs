use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("empty ensemble: a particle ensemble needs at least one point")]
    EmptyEnsemble,
    #[error("non-finite coordinate in particle ensemble")]
    NonFiniteEnsemble,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("SDE solver requires negative self-entropy (or no entropy) on every block")]
    SdeRequiresNegEntropy,
    #[error("closed-form solver requires a registered quadratic product problem")]
    ClosedFormNotRegistered,
    #[error("closed-form solver requires point-mass ensembles (B = 1), got B = {0}")]
    ClosedFormNeedsPointMass(usize),
    #[error("KDE bandwidth must be positive, got {0}")]
    KdeBandwidth(f64),
    #[error("degenerate ensemble: Silverman bandwidth is zero, use a Fixed bandwidth")]
    KdeDegenerate,
    #[error("Wasserstein inputs have different particle counts: {0} vs {1}")]
    UnequalCounts(usize, usize),
    #[error("assignment size {0} exceeds the cap {1}")]
    CapExceeded(usize, usize),
    #[error("negative squared distance entry: {0}")]
    NegativeSquared(f64),
    #[error("batch size formula needs m*L > 1, got m*L = {0}")]
    BatchSizeDomain(f64),
    #[error("transport map Jacobian is singular or non-injective (det = {0:.3e})")]
    SingularJacobian(f64),
    #[error("inner solver rejected {0} times: map stayed non-injective")]
    InnerSolverFailed(usize),
    #[error("non-finite state detected at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("missing particle correspondence for FOC residual")]
    MissingCorrespondence,
    #[error("rate fit needs at least {needed} positive values, got {got}")]
    RateFitInput { needed: usize, got: usize },
    #[error("non-positive values in rate fit; use a polynomial fit for the non-geometric regime")]
    RateFitNonPositive,
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
