use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_error, CliError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Record of one command invocation and everything it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    pub config: Option<serde_json::Value>,
    pub seeds: Vec<u64>,
    pub version: String,
    pub output_dir: String,
    pub files: Vec<ManifestFile>,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String], output_dir: &Path) -> Self {
        Self {
            command: command.into(),
            args: args.to_vec(),
            config: None,
            seeds: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
            output_dir: output_dir.display().to_string(),
            files: Vec::new(),
        }
    }

    /// Lists `files` (which must live under `base`) and writes the manifest
    /// to `path`.
    pub fn write(mut self, path: &Path, base: &Path, files: &[PathBuf]) -> Result<(), CliError> {
        for f in files {
            let data = std::fs::read(f).map_err(|e| io_error(f, e))?;
            let rel = f.strip_prefix(base).unwrap_or(f);
            self.files.push(ManifestFile {
                path: rel.display().to_string(),
                bytes: data.len() as u64,
                sha256: hex(&Sha256::digest(&data)),
            });
        }
        write_json(path, &self)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

/// `<out>.manifest.json` next to a single output file.
pub fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}
