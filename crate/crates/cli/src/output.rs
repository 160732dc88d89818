//! Report serialization: pretty JSON with shortest round-trip floats, CSV via
//! serde rows, LF line endings throughout.

use crate::CliError;
use serde::Serialize;
use std::path::Path;

/// Seconds since the Unix epoch; the only field that differs between
/// identical runs.
pub fn timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(format!("json: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn to_csv<R: Serialize>(rows: &[R]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Internal(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Internal(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::Internal(format!("csv: {e}")))
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Internal(format!("out: cannot write {}: {e}", path.display())))
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
pub fn emit(text: &str) -> Result<(), CliError> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Internal(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}
