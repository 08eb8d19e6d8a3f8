use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value produced by {op} at node {node}")]
    NonFinite { op: &'static str, node: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver diverged at step {step} (t = {time})")]
    Divergence { step: usize, time: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("no embedding stored for sentence hash {hash}")]
    EmbeddingMiss { hash: String },

    #[error("training aborted at epoch {epoch}, batch {batch}: {detail}")]
    Training { epoch: usize, batch: usize, detail: String },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
