use thiserror::Error;

/// Errors produced by the MVSK solver stack.
#[derive(Debug, Error)]
pub enum MvskError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at row {row}{}: {msg}", col.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        /// 1-based line number in the source file.
        row: usize,
        /// 1-based field index, when the error is tied to a single cell.
        col: Option<usize>,
        msg: String,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate face: every coordinate is pinned at the slice floor")]
    DegenerateFace,

    #[error("size cap exceeded: {0}")]
    SizeCap(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = MvskError> = std::result::Result<T, E>;
