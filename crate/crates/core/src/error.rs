//! Error taxonomy shared by every module of the library.
//!
//! Numerical routines never return NaN or infinities: any computation that
//! would produce one reports a structured error instead. Errors are split
//! into domain violations (caller asked for a value outside a function's
//! domain), budget violations (a truncation cap was reached before the
//! requested tolerance), and internal consistency failures.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Input outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Evaluation requested at or too close to a pole.
    #[error("pole at or near {0}")]
    Pole(String),

    /// Evaluation point too close to a discrete q-spiral of poles or zeros.
    #[error("pole proximity: {0}")]
    PoleProximity(String),

    /// A truncation cap was exhausted before the tail bound met tolerance.
    #[error("truncation budget exceeded: {0}")]
    TruncationBudget(String),

    /// A series that diverges for every nonzero argument was evaluated.
    #[error("divergent series: {0}")]
    DivergentSeries(String),

    /// Convergent series evaluated outside its safe radius.
    #[error("outside radius of convergence: {0}")]
    OutsideRadius(String),

    /// A linear recursion hit a (near-)singular division.
    #[error("singular recursion step: {0}")]
    RecursionSingular(String),

    /// Bilateral sum tail failed to decay within the allotted window.
    #[error("tail divergence: {0}")]
    TailDivergence(String),

    /// Least-squares fit of asymptotic constants failed its sanity checks.
    #[error("fit failure: {0}")]
    FitFailure(String),

    /// The function does not satisfy the claimed q-Gevrey asymptotic bound.
    #[error("q-Gevrey bound violated: {0}")]
    GevreyMismatch(String),

    /// Eigenvalue/genericity assumptions of a system are violated.
    #[error("genericity violation: {0}")]
    Genericity(String),

    /// Polynomial root refinement failed to meet its residual target.
    #[error("root finding failed: {0}")]
    Rootfind(String),

    /// A fundamental solution matrix is numerically singular.
    #[error("singular solution matrix: {0}")]
    SingularSolution(String),

    /// No admissible evaluation region exists for a two-sided identity.
    #[error("overlap domain empty: {0}")]
    OverlapDomainEmpty(String),

    /// Evaluation point violates a sector/window constraint.
    #[error("window violation: {0}")]
    WindowViolation(String),

    /// Value produced or consumed that is not finite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Report schema mismatch when merging.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    /// Unknown function name in the evaluation registry.
    #[error("unknown function: {0}")]
    UnknownFunction(String),

    /// I/O failure while reading or writing report files.
    #[error("io error: {0}")]
    Io(String),

    /// Malformed input file (parameters, points, or report JSON).
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors that indicate a caller-side domain/precondition
    /// problem rather than an internal failure. The command line maps these
    /// to its dedicated exit code.
    pub fn is_domain_class(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Pole(_)
                | Error::PoleProximity(_)
                | Error::DivergentSeries(_)
                | Error::OutsideRadius(_)
                | Error::Genericity(_)
                | Error::OverlapDomainEmpty(_)
                | Error::WindowViolation(_)
        )
    }
}
