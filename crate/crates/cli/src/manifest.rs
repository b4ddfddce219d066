//! Run manifests: every command records its resolved configuration and
//! the SHA-256 of every input file, enough to reproduce the run
//! exactly. No timestamps, hostnames, or absolute paths — manifests of
//! identical runs are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::errors::CliError;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    /// Resolved settings after flag/config-file/default layering.
    pub config: BTreeMap<String, serde_json::Value>,
    /// Input path (as given on the command line) -> SHA-256 of contents.
    pub inputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str) -> Manifest {
        Manifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: BTreeMap::new(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        let value = serde_json::to_value(value).expect("manifest values are plain data");
        self.config.insert(key.to_string(), value);
    }

    /// Record an input file by path-as-given and content hash.
    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        let hash = file_sha256(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    /// Write `manifest-<command>.json` into `out_dir`.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf, CliError> {
        let path = out_dir.join(format!("manifest-{}.json", self.command));
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Input(format!("manifest: {e}")))?;
        write_text(&path, &(text + "\n"))?;
        Ok(path)
    }
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes =
        fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Create the directory and write a text file, with IO errors naming
/// the path.
pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Input(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_is_deterministic_and_names_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("data.json");
        fs::write(&input, b"{}").unwrap();

        let build = || {
            let mut m = Manifest::new("extract");
            m.set("seed", 42u64);
            m.set("ig-steps", 50usize);
            m.add_input(&input).unwrap();
            m
        };
        let a = serde_json::to_string(&build()).unwrap();
        let b = serde_json::to_string(&build()).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("data.json"));
        // sha256 of "{}"
        assert!(a.contains("44136fa355b3678a1146ad16f7e8649e94fb4fc21fe77e8310c060f61caaff8a"));
        assert!(!a.contains("timestamp"));
    }

    #[test]
    fn missing_input_is_an_input_error() {
        let mut m = Manifest::new("train");
        let err = m.add_input(Path::new("/nonexistent/ds.json")).unwrap_err();
        assert!(matches!(err, CliError::Input(_)));
        assert!(format!("{err}").contains("/nonexistent/ds.json"));
    }
}
