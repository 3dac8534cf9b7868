use thiserror::Error;

/// Every failure the library can report.
///
/// The variant name doubles as the machine-readable error code emitted by
/// the command-line front end (see [`Error::code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("point has non-positive depth ({depth:.3e}) in the camera frame")]
    NonPositiveDepth { depth: f64 },
    #[error("cannot combine an up-to-scale pose with a metric pose")]
    ScaleMismatch,
    #[error("patch of {width}x{height} is smaller than the 8x8 minimum")]
    DegeneratePatch { width: usize, height: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("malformed detection document: {0}")]
    Schema(String),
    #[error("key-point ({x}, {y}) lies outside the {width}x{height} image")]
    Bounds {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("no body part is valid in both views")]
    NoComparableParts,
    #[error("disparity {0:.3e} px is too small to triangulate")]
    DegenerateDisparity(f64),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("best consensus has {found} inliers, {required} required")]
    InsufficientInliers { found: usize, required: usize },
    #[error(
        "no essential-matrix decomposition places a majority of points in front of both cameras"
    )]
    CheiralityAmbiguity,
    #[error("viewing rays are parallel")]
    ParallelRays,
    #[error("triangulated point lies behind a camera")]
    NegativeDepth,
    #[error("optimizer diverged: {0}")]
    Diverged(String),
    #[error("gauge is under-constrained: {0}")]
    GaugeUnderconstrained(String),
    #[error("no person could be associated between the two views")]
    NoAssociations,
    #[error("{found} correspondences after refinement, {required} required")]
    InsufficientCorrespondences { found: usize, required: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier of the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NonPositiveDepth { .. } => "NonPositiveDepth",
            Error::ScaleMismatch => "ScaleMismatch",
            Error::DegeneratePatch { .. } => "DegeneratePatch",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::Schema(_) => "SchemaError",
            Error::Bounds { .. } => "BoundsError",
            Error::NoComparableParts => "NoComparableParts",
            Error::DegenerateDisparity(_) => "DegenerateDisparity",
            Error::DegenerateConfiguration(_) => "DegenerateConfiguration",
            Error::InsufficientInliers { .. } => "InsufficientInliers",
            Error::CheiralityAmbiguity => "CheiralityAmbiguity",
            Error::ParallelRays => "ParallelRays",
            Error::NegativeDepth => "NegativeDepth",
            Error::Diverged(_) => "Diverged",
            Error::GaugeUnderconstrained(_) => "GaugeUnderconstrained",
            Error::NoAssociations => "NoAssociations",
            Error::InsufficientCorrespondences { .. } => "InsufficientCorrespondences",
            Error::Precondition(_) => "PreconditionError",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Image(_) => "ImageError",
            Error::Json(_) => "JsonError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
