use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate rotation")]
    DegenerateRotation,

    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },

    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("non-finite gradient in block `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite value in block `{0}` after optimizer step")]
    NonFiniteParameter(String),

    #[error("invalid resolution range: finest {finest} < base {base}")]
    InvalidResolution { base: u32, finest: u32 },

    #[error("invalid hash encoder configuration: {0}")]
    InvalidEncoder(String),

    #[error("vertex {vertex:?} outside level resolution {resolution}")]
    VertexOutOfRange { vertex: (u32, u32), resolution: u32 },

    #[error("degenerate submap bounds: every side must be positive")]
    DegenerateBounds,

    #[error("non-finite output from {0} decoder")]
    NonFiniteDecoder(&'static str),

    #[error("empty point list")]
    EmptyPoints,

    #[error("insufficient depth: only {0} valid points")]
    InsufficientDepth(usize),

    #[error("empty ray batch")]
    EmptyBatch,

    #[error("non-finite loss component {0}")]
    NonFiniteLoss(&'static str),

    #[error("missing ground-truth pose for the first frame")]
    MissingGroundTruth,

    #[error("empty scene")]
    EmptyScene,

    #[error("trajectory length mismatch: estimate has {est} poses, ground truth has {gt}")]
    LengthMismatch { est: usize, gt: usize },

    #[error("no valid pixels")]
    NoValidPixels,

    #[error("no submaps allocated")]
    EmptyManager,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
