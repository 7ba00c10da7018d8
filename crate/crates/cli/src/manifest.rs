use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use taskhyper::Error;

use crate::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Git-style content hash: sha256 over `blob <len>\0<bytes>`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub name: String,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_paths: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Effective flags and parsed configuration.
    pub settings: serde_json::Value,
    pub inputs: Vec<InputFile>,
    /// Hash over the per-input content hashes, in input order; file names
    /// do not enter it.
    pub input_hash: String,
}

impl RunManifest {
    /// Hashes `inputs` (named by file name) and records the run parameters.
    pub fn new(
        command: &str,
        output_dir: &Path,
        config_paths: Vec<PathBuf>,
        seeds: Vec<u64>,
        settings: serde_json::Value,
        inputs: &[PathBuf],
    ) -> Result<Self> {
        let mut files = Vec::with_capacity(inputs.len());
        let mut combined = String::new();
        for path in inputs {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let name = path
                .file_name()
                .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
            let hash = blob_hash(&bytes);
            combined.push_str(&hash);
            combined.push('\n');
            files.push(InputFile { name, hash });
        }
        Ok(Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_paths,
            seeds,
            output_dir: output_dir.to_path_buf(),
            settings,
            inputs: files,
            input_hash: blob_hash(combined.as_bytes()),
        })
    }

    /// Creates the output directory and writes the manifest into it.
    pub fn write(&self) -> Result<()> {
        fs::create_dir_all(&self.output_dir).map_err(|e| Error::io(&self.output_dir, e))?;
        let path = self.output_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

pub(crate) fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
