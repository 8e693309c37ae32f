use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Text format error with a 1-based line number.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Binary format error with a byte offset.
    #[error("{path}: at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("unknown or unsupported format: {0}")]
    UnknownFormat(String),

    #[error("face {face} references vertex {index} but the mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },

    #[error("face {face} references vertex {vertex} more than once")]
    RepeatedVertex { face: usize, vertex: usize },

    #[error("degenerate faces (area below 1e-12): {}", format_ids(.0))]
    DegenerateFaces(Vec<usize>),

    #[error("degenerate triangle")]
    DegenerateTriangle,

    #[error("mesh has no faces")]
    EmptyMesh,

    #[error("edge ({a}, {b}) has {count} incident faces")]
    NonManifoldEdge { a: usize, b: usize, count: usize },

    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("initialization too far: no correspondences inside the gates")]
    InitializationTooFar,

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

fn format_ids(ids: &[usize]) -> String {
    const SHOWN: usize = 32;
    let mut s = ids
        .iter()
        .take(SHOWN)
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(", ... ({} total)", ids.len()));
    }
    s
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code, used by the CLI on failure.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::Parse { .. } => "E_PARSE",
            Error::Format { .. } => "E_FORMAT",
            Error::UnknownFormat(_) => "E_UNKNOWN_FORMAT",
            Error::IndexOutOfRange { .. }
            | Error::RepeatedVertex { .. }
            | Error::DegenerateFaces(_)
            | Error::DegenerateTriangle
            | Error::EmptyMesh
            | Error::NonManifoldEdge { .. } => "E_MESH",
            Error::DimensionMismatch { .. } => "E_DIMENSION",
            Error::InvalidParameter(_) => "E_PARAM",
            Error::InvalidModel(_) => "E_MODEL",
            Error::InvalidPose(_) => "E_POSE",
            Error::InitializationTooFar => "E_INIT",
            Error::Solver(_) => "E_SOLVER",
            Error::Config(_) => "E_CONFIG",
            Error::Json { .. } => "E_JSON",
            Error::Stage { source, .. } => source.code(),
        }
    }
}
