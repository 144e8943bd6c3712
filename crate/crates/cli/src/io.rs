use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use fairshare::{validate_allocation, Instance, PartialAllocation};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn read_instance(path: &Path) -> Result<Instance, CliError> {
    read_json(path)
}

/// Accepts a bare allocation or any object carrying one under `allocation`
/// (such as a `solve` report).
#[derive(Deserialize)]
#[serde(untagged)]
enum AllocationFile {
    Wrapped { allocation: PartialAllocation },
    Bare(PartialAllocation),
}

pub fn read_allocation(path: &Path, inst: &Instance) -> Result<PartialAllocation, CliError> {
    let x = match read_json::<AllocationFile>(path)? {
        AllocationFile::Wrapped { allocation } | AllocationFile::Bare(allocation) => allocation,
    };
    validate_allocation(inst, &x).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    Ok(x)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory values serialize");
    s.push('\n');
    s
}

/// Writes to `out`, or stdout when `out` is `None`.
pub fn emit(out: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}
