use thiserror::Error;

/// Errors surfaced by the fusion pipeline.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("degenerate point set: {0}")]
    DegeneratePointSet(String),

    #[error("alignment failed: {0}")]
    AlignmentFailed(String),

    #[error("window too sparse: {have} poses inside radius {radius} (need at least {need})")]
    WindowTooSparse { have: usize, need: usize, radius: f64 },

    #[error("degenerate Hessian: damping exceeded {max_damping:e} without yielding a descent step")]
    DegenerateHessian { max_damping: f64 },

    #[error("unobservable directions: Hessian null space has dimension {dim}")]
    UnobservableDirections { dim: usize },

    #[error("pose graph disconnected: robot {robot} has no validated loop path to robot 0")]
    DisconnectedGraph { robot: u32 },

    #[error("length mismatch: {context} ({left} vs {right})")]
    LengthMismatch { context: &'static str, left: usize, right: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no overlap in sessions")]
    NoOverlap,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: parse error: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        CoreError::Parse { path: path.into(), line, msg: msg.into() }
    }
}
