//! Structured error codes and the process exit-code contract.

use serde::Serialize;
use std::fmt;

/// Whether a caller may reasonably retry after an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Retryable {
    Yes,
    No,
    Sometimes,
    Manual,
}

/// Every failure the command surface can report. Each code owns exactly one
/// process exit status, so the emitted status, `meta.exit_code` and the error
/// symbol can never disagree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    Internal,
    BadSelectorSyntax,
    NotFound,
    Ambiguous,
    VersionSkew,
    LsTimeout,
    LsCrash,
    ApplyConflict,
    FsPermissions,
    UnsupportedCap,
    RequestCancelled,
    ContentModified,
    IndexingUnsupported,
    /// A position that falls inside a multi-unit character or past the end
    /// of its line. Shares the indexing exit status.
    IndexingMismatch,
    ReplayMismatch,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 15] = [
        ErrorCode::Internal,
        ErrorCode::BadSelectorSyntax,
        ErrorCode::NotFound,
        ErrorCode::Ambiguous,
        ErrorCode::VersionSkew,
        ErrorCode::LsTimeout,
        ErrorCode::LsCrash,
        ErrorCode::ApplyConflict,
        ErrorCode::FsPermissions,
        ErrorCode::UnsupportedCap,
        ErrorCode::RequestCancelled,
        ErrorCode::ContentModified,
        ErrorCode::IndexingUnsupported,
        ErrorCode::IndexingMismatch,
        ErrorCode::ReplayMismatch,
    ];

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCode::Internal => 1,
            ErrorCode::BadSelectorSyntax => 2,
            ErrorCode::NotFound => 3,
            ErrorCode::Ambiguous => 4,
            ErrorCode::VersionSkew => 10,
            ErrorCode::LsTimeout => 64,
            ErrorCode::LsCrash => 65,
            ErrorCode::ApplyConflict => 70,
            ErrorCode::FsPermissions => 71,
            ErrorCode::UnsupportedCap => 72,
            ErrorCode::RequestCancelled => 73,
            ErrorCode::ContentModified => 74,
            ErrorCode::IndexingUnsupported | ErrorCode::IndexingMismatch => 75,
            ErrorCode::ReplayMismatch => 76,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            ErrorCode::Internal => "E/INTERNAL",
            ErrorCode::BadSelectorSyntax => "E/BAD_SELECTOR_SYNTAX",
            ErrorCode::NotFound => "E/NOT_FOUND",
            ErrorCode::Ambiguous => "E/AMBIGUOUS",
            ErrorCode::VersionSkew => "E/VERSION_SKEW",
            ErrorCode::LsTimeout => "E/LS_TIMEOUT",
            ErrorCode::LsCrash => "E/LS_CRASH",
            ErrorCode::ApplyConflict => "E/APPLY_CONFLICT",
            ErrorCode::FsPermissions => "E/FS_PERMISSIONS",
            ErrorCode::UnsupportedCap => "E/UNSUPPORTED_CAP",
            ErrorCode::RequestCancelled => "E/REQUEST_CANCELLED",
            ErrorCode::ContentModified => "E/CONTENT_MODIFIED",
            ErrorCode::IndexingUnsupported => "E/INDEXING_UNSUPPORTED",
            ErrorCode::IndexingMismatch => "E/INDEXING_MISMATCH",
            ErrorCode::ReplayMismatch => "E/REPLAY_MISMATCH",
        }
    }

    pub fn retryable(self) -> Retryable {
        match self {
            ErrorCode::NotFound => Retryable::Sometimes,
            ErrorCode::Ambiguous
            | ErrorCode::VersionSkew
            | ErrorCode::LsTimeout
            | ErrorCode::LsCrash
            | ErrorCode::RequestCancelled
            | ErrorCode::ContentModified => Retryable::Yes,
            ErrorCode::ApplyConflict => Retryable::Manual,
            _ => Retryable::No,
        }
    }

    pub fn from_symbol(symbol: &str) -> Option<ErrorCode> {
        ErrorCode::ALL.into_iter().find(|c| c.symbol() == symbol)
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl Serialize for ErrorCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.symbol())
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{code}: {message}")]
pub struct LanserError {
    pub code: ErrorCode,
    pub message: String,
    /// Machine-readable payload (conflict hunks, failing trace seq, ...).
    pub details: Option<serde_json::Value>,
}

impl LanserError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        LanserError {
            code,
            message: message.into(),
            details: None,
        }
    }

    pub fn with_details(mut self, details: serde_json::Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn internal(message: impl Into<String>) -> Self {
        LanserError::new(ErrorCode::Internal, message)
    }

    pub fn fs(err: std::io::Error, what: impl fmt::Display) -> Self {
        LanserError::new(ErrorCode::FsPermissions, format!("{what}: {err}"))
    }
}

pub type Result<T, E = LanserError> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_table_matches_contract() {
        let table = [
            (ErrorCode::BadSelectorSyntax, 2, Retryable::No),
            (ErrorCode::NotFound, 3, Retryable::Sometimes),
            (ErrorCode::Ambiguous, 4, Retryable::Yes),
            (ErrorCode::VersionSkew, 10, Retryable::Yes),
            (ErrorCode::LsTimeout, 64, Retryable::Yes),
            (ErrorCode::LsCrash, 65, Retryable::Yes),
            (ErrorCode::ApplyConflict, 70, Retryable::Manual),
            (ErrorCode::FsPermissions, 71, Retryable::No),
            (ErrorCode::UnsupportedCap, 72, Retryable::No),
            (ErrorCode::RequestCancelled, 73, Retryable::Yes),
            (ErrorCode::ContentModified, 74, Retryable::Yes),
            (ErrorCode::IndexingUnsupported, 75, Retryable::No),
            (ErrorCode::ReplayMismatch, 76, Retryable::No),
        ];
        for (code, exit, retry) in table {
            assert_eq!(code.exit_code(), exit, "{code}");
            assert_eq!(code.retryable(), retry, "{code}");
        }
    }

    #[test]
    fn symbols_round_trip() {
        for code in ErrorCode::ALL {
            assert_eq!(ErrorCode::from_symbol(code.symbol()), Some(code));
        }
    }
}
