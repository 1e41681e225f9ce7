//! Errors and version handling shared by the on-disk formats.
//! The grammars are documented in `docs/formats.md`.

use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing header line")]
    MissingHeader,
    #[error("expected format {expected:?}, found {found:?}")]
    WrongFormat { expected: &'static str, found: String },
    #[error("{format} version {found} is not supported (this build reads {supported}.x)")]
    UnsupportedVersion {
        format: &'static str,
        found: String,
        supported: u32,
    },
    #[error("line {line}: timestamp {got} does not follow {previous}")]
    NonIncreasing { line: usize, previous: i64, got: i64 },
    #[error("line {line}: non-finite coordinate")]
    NonFinite { line: usize },
    #[error("unexpected feature table header {0:?}")]
    BadHeader(String),
    #[error("{what}: expected {expected}, found {found}")]
    Count {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

impl FormatError {
    pub(crate) fn json(line: usize) -> impl FnOnce(serde_json::Error) -> FormatError {
        move |source| FormatError::Json { line, source }
    }
}

/// Accepts `found` when its major component equals `supported`.
pub fn check_version(format: &'static str, found: &str, supported: u32) -> Result<(), FormatError> {
    let major = found.split('.').next().and_then(|m| m.parse::<u32>().ok());
    if major == Some(supported) {
        Ok(())
    } else {
        Err(FormatError::UnsupportedVersion {
            format,
            found: found.to_string(),
            supported,
        })
    }
}

pub fn check_format(expected: &'static str, found: &str) -> Result<(), FormatError> {
    if found == expected {
        Ok(())
    } else {
        Err(FormatError::WrongFormat {
            expected,
            found: found.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn major_version_gate() {
        assert!(check_version("x", "1.0", 1).is_ok());
        assert!(check_version("x", "1.7", 1).is_ok());
        assert!(check_version("x", "1", 1).is_ok());
        assert!(matches!(check_version("x", "2.0", 1), Err(FormatError::UnsupportedVersion { .. })));
        assert!(check_version("x", "one", 1).is_err());
        assert!(check_version("x", "", 1).is_err());
    }
}
