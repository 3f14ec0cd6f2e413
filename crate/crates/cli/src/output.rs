//! Output files: provenance-stamped JSON documents and CSV tables, written
//! atomically (temp file + rename) so concurrent strategy runs never
//! interleave.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct PanelHash {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn hash_file(path: &Path) -> Result<PanelHash, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {path:?}: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(PanelHash {
        path: path.to_path_buf(),
        sha256: format!("{:x}", hasher.finalize()),
    })
}

/// Provenance header embedded in every JSON output.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config: serde_json::Value,
    pub inputs: Vec<PanelHash>,
}

pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Validation(format!("cannot create {dir:?}: {e}")))?;
    let tmp = dir.join(format!(".{name}.tmp"));
    let target = dir.join(name);
    std::fs::write(&tmp, contents)
        .map_err(|e| CliError::Validation(format!("cannot write {tmp:?}: {e}")))?;
    std::fs::rename(&tmp, &target)
        .map_err(|e| CliError::Validation(format!("cannot rename into {target:?}: {e}")))?;
    Ok(target)
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable output")
}
