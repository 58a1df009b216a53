use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("segment endpoints coincide")]
    DegenerateSegment,
    #[error("points coincide, no line through them")]
    CoincidentPoints,
    #[error("line passes through the origin (n = 0)")]
    LineThroughOrigin,
    #[error("degenerate line (zero direction)")]
    DegenerateLine,
    #[error("line projection undefined: line passes through the camera center")]
    ProjectionUndefined,
    #[error("point has non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("non-positive disparity {0}")]
    NonPositiveDisparity(f64),
    #[error("stereo rows disagree by {0} px")]
    RowMismatch(f64),
    #[error("back-projection planes are near parallel ({angle_deg:.4} deg)")]
    DegenerateTriangulation { angle_deg: f64 },
    #[error("triangulated landmark lies behind a camera")]
    BehindCamera,
    #[error("not enough correspondences: {got} (need {need})")]
    TooFewCorrespondences { got: usize, need: usize },
    #[error("optimization diverged")]
    Diverged,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("id already in use: {0}")]
    IdCollision(String),
    #[error("unknown id: {0}")]
    UnknownId(String),
    #[error("trajectories share no timestamps")]
    NoTimestampOverlap,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
