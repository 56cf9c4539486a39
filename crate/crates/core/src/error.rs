use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension must be 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("coordinate vector {index} has {got} components, expected {expected}")]
    CoordinateLength {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("points {0} and {1} coincide")]
    DuplicatePoint(usize, usize),
    #[error("cameras {0} and {1} coincide")]
    DuplicateCamera(usize, usize),
    #[error("camera {camera} coincides with point {point}")]
    CameraOnPoint { camera: usize, point: usize },
    #[error("camera {camera} is straight above or below point {point}; the bearing is undefined")]
    VerticalRay { camera: usize, point: usize },
    #[error("dimension mismatch: scene is {scene}D, rig is {rig}D")]
    DimensionMismatch { scene: usize, rig: usize },
    #[error("timestamps must be strictly increasing (violated at frame {0})")]
    NonIncreasingTimes(usize),
    #[error("expected {expected} {what}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("oriented rigs carry no headings; non-oriented rigs need one per camera")]
    HeadingsMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("at least two points are needed to fix the scale gauge")]
    TooFewPoints,
    #[error("no visible observations")]
    NoObservations,
    #[error("observation set has no elevations")]
    MissingElevations,
    #[error("bearings are relative to unknown camera headings; de-rotate first")]
    Unoriented,
    #[error("gauge index out of range or inconsistent: {0}")]
    BadGauge(String),
    #[error("duplicate timestamps at frames {0} and {1}")]
    DuplicateTimes(usize, usize),
    #[error("frame interval {0} has no point visible at both ends")]
    EmptyInterval(usize),
    #[error("configuration is not ambiguous; no kernel to follow")]
    NotAmbiguous,
    #[error("configuration is ambiguous (kernel dimension {0})")]
    Ambiguous(usize),
    #[error("random sampling budget of {0} attempts exhausted")]
    SamplingBudget(usize),
    #[error("singular value decomposition failed to converge")]
    SvdFailure,
    #[error("malformed input: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
