//! Output directory with digests and a run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Wall-clock seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    pub outputs: Vec<Artifact>,
}

pub struct OutputDir {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
    started: f64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(OutputDir { dir: dir.to_path_buf(), artifacts: Vec::new(), started: now() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.artifacts.push(Artifact {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// CSV preceded by `# key: value` comment lines.
    pub fn write_csv(&mut self, name: &str, preamble: &[(&str, String)], header: &[String], rows: &[Vec<f64>]) -> Result<(), CliError> {
        let mut text = String::new();
        for (k, v) in preamble {
            let _ = writeln!(text, "# {k}: {v}");
        }
        text.push_str(&header.join(","));
        text.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    pub fn finish(self, subcommand: &str, config: serde_json::Value, seed: Option<u64>) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            tool: "hypomhd",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            config,
            seed,
            started: self.started,
            finished: now(),
            outputs: self.artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        let path = self.dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}
