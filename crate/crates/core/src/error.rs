use thiserror::Error;

/// Errors raised by mesh construction, the forward solvers and the calibrators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SlvError {
    #[error("invalid bounds: max ({max}) must exceed min ({min})")]
    InvalidBounds { min: f64, max: f64 },
    #[error("step {step} does not divide [{min}, {max}] into an integral number of cells")]
    NonIntegralStep { min: f64, max: f64, step: f64 },
    #[error("coarse mesh is not nested in the fine mesh: {0}")]
    NonNestedMesh(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("axis mismatch: {0}")]
    AxisMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("initial state ({x}, {v}) lies outside the mesh interior")]
    CenterOutsideMesh { x: f64, v: f64 },
    #[error("leverage must be nonnegative, got {value} at x-node {index}")]
    NegativeLeverage { index: usize, value: f64 },
    #[error("tridiagonal elimination hit pivot {pivot:e} at row {row}")]
    SingularTridiagonal { row: usize, pivot: f64 },
    #[error("no x-node has a usable conditional-variance denominator at time step {step}")]
    AllDegenerate { step: usize },
    #[error("normal equations are singular: {0}")]
    SingularSystem(String),
    #[error("axis needs at least 3 nodes, got {0}")]
    AxisTooSmall(usize),
    #[error("no x-node falls in [{lo}, {hi}]")]
    EmptyRegion { lo: f64, hi: f64 },
    #[error("parse error: {0}")]
    Parse(String),
}

impl SlvError {
    /// Stable variant name, used for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            SlvError::InvalidBounds { .. } => "InvalidBounds",
            SlvError::NonIntegralStep { .. } => "NonIntegralStep",
            SlvError::NonNestedMesh(_) => "NonNestedMesh",
            SlvError::ShapeMismatch(_) => "ShapeMismatch",
            SlvError::AxisMismatch(_) => "AxisMismatch",
            SlvError::InvalidParameter(_) => "InvalidParameter",
            SlvError::CenterOutsideMesh { .. } => "CenterOutsideMesh",
            SlvError::NegativeLeverage { .. } => "NegativeLeverage",
            SlvError::SingularTridiagonal { .. } => "SingularTridiagonal",
            SlvError::AllDegenerate { .. } => "AllDegenerate",
            SlvError::SingularSystem(_) => "SingularSystem",
            SlvError::AxisTooSmall(_) => "AxisTooSmall",
            SlvError::EmptyRegion { .. } => "EmptyRegion",
            SlvError::Parse(_) => "Parse",
        }
    }
}

pub type Result<T> = std::result::Result<T, SlvError>;
