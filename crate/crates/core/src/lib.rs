//! Novel-token gradient rescaling for neural text generation.
//!
//! The crate bundles everything needed to study repetition in a tiny
//! autoregressive language model:
//!
//! * [`vocab`]: corpus ingestion, tokenization and teacher-forced batching.
//! * [`novel`]: the per-sequence set of tokens not yet seen in the target prefix.
//! * [`losses`]: softmax, the novel-token renormalization and the three
//!   per-step objectives (MLE, ScaleGrad, unlikelihood) with closed-form
//!   gradients and a finite-difference checker.
//! * [`model`]: a single-layer LSTM language model with manual backprop,
//!   Adam, training loop and a text checkpoint format.
//! * [`decoding`]: greedy, beam, top-k and top-p decoding with n-gram blocking.
//! * [`metrics`]: perplexity, Rep/l, uniq, Rep-n and uniq-w.

pub mod decoding;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod novel;
pub mod vocab;

pub use decoding::{DecodeConfig, DecodeOutput, Hypothesis, LanguageModel, Strategy};
pub use error::{Error, Result};
pub use losses::{LossGrad, Objective, SgDistribution, StepLogits};
pub use metrics::MetricsReport;
pub use model::{AdamState, TinyLM, TrainConfig, TrainLog};
pub use novel::NovelTokenSet;
pub use vocab::{Batch, Corpus, TokenizerMode, Vocabulary};

/// Token id type used throughout the crate.
pub type TokenId = u32;

/// Hex-encoded SHA-256 of a byte string.
pub fn digest_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
