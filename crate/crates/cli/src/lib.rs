//! Library half of the `scalegrad` binary: run configuration, subcommand
//! implementations and the desk-scale experiment protocol.

use std::fmt;

pub mod commands;
pub mod config;
pub mod experiment;

pub use config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Bad flags, bad config or unreadable inputs. Exit code 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A check ran to completion and failed. Exit code 3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationFailed(pub String);

impl fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for VerificationFailed {}

/// 1 for usage/config errors, 3 for verification failures, 2 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use scalegrad_core::Error as E;
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    if err.downcast_ref::<VerificationFailed>().is_some() {
        return 3;
    }
    match err.downcast_ref::<E>() {
        Some(
            E::Config(_) | E::InvalidGamma(_) | E::InvalidAlpha(_) | E::VocabTooSmall(_) | E::ZeroDim { .. } | E::ZeroVocab,
        ) => 1,
        _ => 2,
    }
}
