use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("label `{0}` is used both as an entity and as a relation")]
    NamespaceCollision(String),

    #[error("statements are already augmented with inverse and self-loop relations")]
    AlreadyAugmented,

    #[error("statements must be augmented before this operation")]
    NotAugmented,

    #[error("unknown {kind} id {id} (vocabulary holds {len})")]
    UnknownId { kind: &'static str, id: usize, len: usize },

    #[error("unknown {kind} label `{label}`")]
    UnknownLabel { kind: &'static str, label: String },

    #[error("qualifier row {row} references fact {fact}, which has no triple row")]
    DanglingFact { row: usize, fact: usize },

    #[error("fact index {0} appears more than once in the triple matrix")]
    DuplicateFact(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rotate composition needs an even dimension, got {0}")]
    OddDimension(usize),

    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),

    #[error("query needs {needed} positions but the maximum length is {max_len}")]
    QueryTooLong { needed: usize, max_len: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("requested qualifier ratio {requested} is unreachable: {reason}")]
    UnreachableRatio { requested: f64, reason: String },

    #[error("query has no positive entity")]
    NoPositive,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("gold entity {0} is masked out of the ranking")]
    GoldMasked(usize),

    #[error("query key is missing from the filter index: {0}")]
    MissingFilterKey(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
