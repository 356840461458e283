use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("unknown phone: {0:?}")]
    UnknownPhone(String),

    #[error("duplicate phone: {0:?}")]
    DuplicatePhone(String),

    #[error("feature table has no feature named {0:?}")]
    MissingFeature(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("model file error: {0}")]
    Model(String),

    #[error("newick parse error at offset {pos}: {msg}")]
    Newick { pos: usize, msg: String },

    #[error("duplicate leaf label: {0:?}")]
    DuplicateLeaf(String),

    #[error("unknown leaf label: {0:?}")]
    UnknownLeaf(String),

    #[error("leaf sets differ; only in first: {only_a:?}, only in second: {only_b:?}")]
    LeafSetMismatch {
        only_a: Vec<String>,
        only_b: Vec<String>,
    },

    #[error("correspondence {corr_id}: {msg}")]
    Correspondence { corr_id: u32, msg: String },

    #[error("gqd undefined: gold tree has no butterflies but hypothesis does")]
    GqdUndefined,

    #[error("language {language:?}: observed state {phone:?} is not a matrix state")]
    StateNotInMatrix { language: String, phone: String },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
