use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// `git describe` of the source tree at build time, or `unknown`.
pub const BUILD_ID: &str = env!("UNLEARN_BUILD_ID");

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Provenance record of one command: settings, build, hashed inputs and
/// outputs, wall-clock time.
///
/// Text form:
///
/// ```text
/// unlearn-run 1
/// command train
/// build v0.1.0-3-gabcdef0
/// wall_clock_s 12.500
/// config method ours
/// input <sha256> <path>
/// output <sha256> <path>
/// ```
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub build: String,
    pub config: Vec<(String, String)>,
    pub inputs: Vec<(PathBuf, String)>,
    pub outputs: Vec<(PathBuf, String)>,
    started: Instant,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            build: BUILD_ID.to_string(),
            config: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push((path.to_path_buf(), sha256_file(path)?));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push((path.to_path_buf(), sha256_file(path)?));
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("unlearn-run 1\ncommand {}\nbuild {}\n", self.command, self.build);
        writeln!(s, "wall_clock_s {:.3}", self.started.elapsed().as_secs_f64()).unwrap();
        for (k, v) in &self.config {
            writeln!(s, "config {k} {v}").unwrap();
        }
        for (kind, list) in [("input", &self.inputs), ("output", &self.outputs)] {
            for (path, hash) in list {
                writeln!(s, "{kind} {hash} {}", path.display()).unwrap();
            }
        }
        s
    }

    /// Writes the manifest to `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
