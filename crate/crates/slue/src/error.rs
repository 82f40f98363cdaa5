use thiserror::Error;

/// Errors produced across the library.
#[derive(Error, Debug)]
pub enum SlueError {
    #[error("invalid input: {0}")]
    Input(String),

    /// A 3D point projects to nonpositive depth.
    #[error("chirality violation: keypoint depth {0} is not positive")]
    Chirality(f64),

    #[error("no ellipsoid certified at this order: {0}")]
    NotCertified(String),

    #[error("constraint set unbounded in some direction: {0}")]
    UnboundedSet(String),

    /// The ellipsoid has empty interior along the listed axes.
    #[error("degenerate bound along axes {axes:?}")]
    DegenerateBound { axes: Vec<usize> },

    #[error("numerical failure in conic solver: status {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SlueError>;

impl SlueError {
    pub fn input(msg: impl Into<String>) -> Self {
        SlueError::Input(msg.into())
    }
}
