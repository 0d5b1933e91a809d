use thiserror::Error;

pub type Result<T> = std::result::Result<T, MapError>;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("need at least {needed} poses, got {got}")]
    TooFewPoses { needed: usize, got: usize },

    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),

    #[error("covariance is not symmetric positive definite: {0}")]
    InvalidCovariance(String),

    #[error("invalid loop closure ({i}, {j}): {reason}")]
    InvalidClosure { i: usize, j: usize, reason: String },

    #[error("neighborhood of vertex {center} is truncated by the path ends")]
    NeighborhoodOutOfRange { center: usize },

    #[error("normal equations are singular")]
    SingularSystem,

    #[error("pose graph is not connected")]
    DisconnectedGraph,

    #[error("need at least {needed} data points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("no mixture component has weight above {floor}")]
    NoComponentAboveFloor { floor: f64 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("found {got} loop closures, need at least {needed}")]
    TooFewClosures { needed: usize, got: usize },

    #[error("found {got} loop closures, more than the limit of {limit}")]
    TooManyClosures { limit: usize, got: usize },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<MapError>,
    },

    #[error("lap extraction failed: {0}")]
    LapExtraction(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("missing ground truth: {0}")]
    MissingTruth(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
