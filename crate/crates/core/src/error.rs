use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus is empty after tokenization")]
    EmptyCorpus,
    #[error("max vocabulary size {0} cannot hold the 3 special tokens plus one entry")]
    VocabTooSmall(usize),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("vocabulary size must be at least 1")]
    ZeroVocab,
    #[error("gamma must lie in (0, 1], got {0}")]
    InvalidGamma(f64),
    #[error("alpha must be non-negative, got {0}")]
    InvalidAlpha(f64),
    #[error("input is not a probability distribution (sum = {0})")]
    NotADistribution(f64),
    #[error("target token {0} is listed among the negative candidates")]
    TargetInNegatives(usize),
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("model dimensions must be >= 1 (vocab {vocab}, embed {embed}, hidden {hidden})")]
    ZeroDim {
        vocab: usize,
        embed: usize,
        hidden: usize,
    },
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {epoch}: mean loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("vocabulary file error: {0}")]
    VocabFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
