//! TOML configuration files.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{read_text, write_atomic};
use crate::error::{PtychoError, Result};

/// Parse a TOML file; syntax errors and unknown keys become config errors.
pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| PtychoError::Config(format!("{}: {e}", path.display())))
}

pub fn save_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value).map_err(|e| PtychoError::Config(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}
