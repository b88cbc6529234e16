//! Coarse error classification used to map failures onto process exit codes.

/// Whether an error is the caller's fault (bad config, schema, or input) or a
/// runtime failure (I/O, divergence, missing artifacts). The command-line
/// front end exits with 1 for validation errors and 2 for runtime errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Runtime,
}

/// Implemented by every error type in the crate so the front end can pick an
/// exit code without inspecting variants.
pub trait Classify {
    fn class(&self) -> ErrorClass;
}
