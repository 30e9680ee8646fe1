//! Files on disk: datasets, preprocessing of measured frames, configs and
//! reconstruction outputs.

pub mod array_file;
pub mod config;
pub mod dataset;
pub mod output;
pub mod preprocess;

use std::io::Write;
use std::path::Path;

use crate::error::{PtychoError, Result};

/// Write `bytes` to a temporary file next to `path`, then rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| PtychoError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| PtychoError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| PtychoError::io(path, e))?;
    tmp.persist(path).map_err(|e| PtychoError::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| PtychoError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| PtychoError::io(path, e))
}
