//! Output helpers: 12-significant-digit float formatting, atomic file
//! writes, and coded errors that map to exit codes.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

/// Floats in CSV/JSON artifacts carry 12 significant digits.
pub fn fmt12(x: f64) -> String {
    format!("{:.11e}", x)
}

/// Write through a temp file in the same directory and rename into place,
/// so error paths never leave a partial artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp_name = path
        .file_name()
        .map(|n| n.to_os_string())
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Error carrying a machine-readable code; `main` serializes it as JSON
/// and picks the exit status from the code.
#[derive(Debug)]
pub struct CodedError {
    pub code: &'static str,
    pub message: String,
}

impl fmt::Display for CodedError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CodedError {}

pub fn config_error(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(CodedError {
        code: "config",
        message: message.into(),
    })
}

pub fn data_error(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(CodedError {
        code: "data",
        message: message.into(),
    })
}

/// JSON document describing an error, printed to stderr on failure.
pub fn error_json(err: &anyhow::Error) -> String {
    let code = err
        .downcast_ref::<CodedError>()
        .map(|c| c.code)
        .unwrap_or("internal");
    serde_json::json!({
        "error": { "code": code, "message": format!("{err:#}") }
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt12_has_twelve_significant_digits() {
        assert_eq!(fmt12(0.015491933384829668), "1.54919333848e-2");
        assert_eq!(fmt12(0.0), "0.00000000000e0");
        assert_eq!(fmt12(-2.5), "-2.50000000000e0");
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("file.csv");
        write_atomic(&path, b"a,b\n").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"a,b\n");
        let entries: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(entries.len(), 1);
    }
}
