use thiserror::Error;

/// Errors raised by the numerical kernels.
///
/// The variants are shared across modules; each operation documents which
/// subset it can return.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("elastic tensor is not coercive (smallest Voigt eigenvalue {0:e})")]
    NotCoercive(f64),
    #[error("invalid Lame parameters: mu = {mu}, lambda = {lambda} (need mu > 0 and 2 mu + lambda > 0)")]
    InvalidLame { mu: f64, lambda: f64 },

    #[error("segment pair {0} has coincident endpoints")]
    DegeneratePair(usize),
    #[error("expected {expected} segment pairs or lines, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("no admissible ordering: the first line must cross both others")]
    NeedsReordering,
    #[error("the first three lines must share one direction")]
    NotParallelTriple,
    #[error("projected direction of line {0} vanishes")]
    DegenerateProjection(usize),
    #[error("truss is singular: |det| = {det:e} below threshold {threshold:e}")]
    SingularTruss { det: f64, threshold: f64 },
    #[error("mixed dimensions in truss input")]
    DimensionMismatch,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("fidelity weight is zero; the minimizer is the trivial zero state")]
    TrivialProblem,
    #[error("grid with {0} points is too large for exhaustive enumeration (max 16)")]
    TooLarge(usize),

    #[error("crack segment {0} leaves the domain")]
    CrackOutsideDomain(usize),
    #[error("invalid thickness h = {0}")]
    InvalidThickness(f64),
    #[error("ball of radius {radius} does not fit in the strip")]
    BallTooLarge { radius: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("elastic system is singular: no fidelity and no boundary data")]
    SingularSystem,

    #[error("cannot reach L2 tolerance {eta:e}; best achievable {best:e} (refine the grid)")]
    CannotAchieveEta { eta: f64, best: f64 },

    #[error("exceptional set covers rectangle centred at {0}")]
    EmptyRectangle(f64),
    #[error("no good rectangles; rigid motions are undefined")]
    NoGoodRectangles,
    #[error("{severed} severed components exceed the jump certificate {certificate}")]
    CertificateViolation { severed: usize, certificate: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
