use thiserror::Error;

/// Errors raised by the numerical kernels.
///
/// Variant names are part of the public contract: the CLI reports them
/// verbatim next to the offending config path.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not normal (residual {residual:.3e} > tolerance {tolerance:.3e})")]
    NonNormal { residual: f64, tolerance: f64 },
    #[error("matrix is not Hermitian (residual {residual:.3e} > tolerance {tolerance:.3e})")]
    NonHermitian { residual: f64, tolerance: f64 },
    #[error("eigensolver did not converge")]
    NoConvergence,
    #[error("singular operator: block spectra separated by only {separation:.3e}")]
    SingularOperator { separation: f64 },
    #[error("eigenvalue {eigenvalue} lies on the window boundary (distance {distance:.3e})")]
    BoundaryEigenvalue { eigenvalue: String, distance: f64 },
    #[error("no eigenvalue inside the spectral window")]
    EmptyWindow,
    #[error("window contains every eigenvalue; the complement is empty")]
    FullWindow,
    #[error("gap {gap:.3e} is below the supported minimum {minimum:.3e}")]
    GapTooSmall { gap: f64, minimum: f64 },
    #[error("resolvent norm {norm:.3e} exceeds 1e12 at quadrature node {node}")]
    ResolventBlowup { norm: f64, node: usize },
    #[error("invalid spectral window: {0}")]
    InvalidWindow(String),
    #[error("invalid marked set: {0}")]
    InvalidMarkedSet(String),
    #[error("matrix A is singular")]
    SingularA,
    #[error("condition number {kappa} is below 2; the gap-minimum model is invalid")]
    KappaTooSmall { kappa: f64 },
    #[error("path norm {norm} exceeds the admissible bound {bound}")]
    NormTooLarge { norm: f64, bound: f64 },
    #[error("Trotter step h = {h} is not below sqrt(gap) = {sqrt_gap}")]
    StepTooLarge { h: f64, sqrt_gap: f64 },
    #[error("phase randomisation requires a gap model")]
    GapModelMissing,
    #[error("integration step {step:.3e} fell below 1e-9 at s = {s}")]
    StepUnderflow { step: f64, s: f64 },
    #[error("state became unphysical at s = {s} (minimum eigenvalue {min_eigenvalue:.3e})")]
    NonPhysicalState { s: f64, min_eigenvalue: f64 },
    #[error("invalid density matrix: {0}")]
    InvalidState(String),
    #[error("rate {rate} exceeds the thinning envelope {envelope} at s = {s}")]
    EnvelopeViolation { s: f64, rate: f64, envelope: f64 },
    #[error("gap model is non-positive at s = {s}")]
    NonPositiveGap { s: f64 },
    #[error("schedule is not differentiable: {0}")]
    ScheduleNotDifferentiable(String),
    #[error("assumption on the gap integrals is not certified: {0}")]
    AssumptionNotCertified(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    /// Stable variant name, used in CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NonNormal { .. } => "NonNormal",
            Error::NonHermitian { .. } => "NonHermitian",
            Error::NoConvergence => "NoConvergence",
            Error::SingularOperator { .. } => "SingularOperator",
            Error::BoundaryEigenvalue { .. } => "BoundaryEigenvalue",
            Error::EmptyWindow => "EmptyWindow",
            Error::FullWindow => "FullWindow",
            Error::GapTooSmall { .. } => "GapTooSmall",
            Error::ResolventBlowup { .. } => "ResolventBlowup",
            Error::InvalidWindow(_) => "InvalidWindow",
            Error::InvalidMarkedSet(_) => "InvalidMarkedSet",
            Error::SingularA => "SingularA",
            Error::KappaTooSmall { .. } => "KappaTooSmall",
            Error::NormTooLarge { .. } => "NormTooLarge",
            Error::StepTooLarge { .. } => "StepTooLarge",
            Error::GapModelMissing => "GapModelMissing",
            Error::StepUnderflow { .. } => "StepUnderflow",
            Error::NonPhysicalState { .. } => "NonPhysicalState",
            Error::InvalidState(_) => "InvalidState",
            Error::EnvelopeViolation { .. } => "EnvelopeViolation",
            Error::NonPositiveGap { .. } => "NonPositiveGap",
            Error::ScheduleNotDifferentiable(_) => "ScheduleNotDifferentiable",
            Error::AssumptionNotCertified(_) => "AssumptionNotCertified",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Unsupported(_) => "Unsupported",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
