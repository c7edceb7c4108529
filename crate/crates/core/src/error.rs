use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("tissue scarcity on slide `{slide_id}`: {attempts} consecutive patches rejected")]
    TissueScarcity { slide_id: String, attempts: usize },

    #[error("feature backend failed on patch {patch_index}: {message}")]
    Backend { patch_index: usize, message: String },

    #[error("model shape error: expected {expected}, found {found}")]
    ModelShape { expected: String, found: String },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("size error: {0}")]
    Size(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate labels: training data must contain both classes")]
    DegenerateLabels,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Attach the path of the file being processed.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code: 3 for data and format problems, 4 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::File { source, .. } => source.exit_code(),
            Error::Numerical(_) => 4,
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}
