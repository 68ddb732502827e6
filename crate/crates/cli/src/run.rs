//! Run directories: `<runs>/<timestamp>-<command>/` holding one manifest
//! plus every artifact the command writes.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    /// True when no `--seed` was given and one was drawn.
    pub seed_drawn: bool,
    pub threads: Option<usize>,
    pub config: Value,
    pub artifacts: Vec<String>,
    pub warnings: Vec<String>,
    pub version: &'static str,
    pub started: String,
}

pub struct Run {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Run {
    /// Creates a fresh directory; a numeric suffix avoids collisions.
    pub fn create(root: &Path, command: &str, seed: u64, seed_drawn: bool, threads: Option<usize>) -> Result<Self, CliError> {
        let now = chrono::Local::now();
        let stamp = now.format("%Y%m%d-%H%M%S").to_string();
        std::fs::create_dir_all(root)?;
        let mut dir = root.join(format!("{stamp}-{command}"));
        let mut k = 1;
        while dir.exists() {
            k += 1;
            dir = root.join(format!("{stamp}-{command}-{k}"));
        }
        std::fs::create_dir(&dir)?;
        Ok(Run {
            dir,
            manifest: Manifest {
                command: command.to_string(),
                argv: std::env::args().collect(),
                seed,
                seed_drawn,
                threads,
                config: Value::Null,
                artifacts: Vec::new(),
                warnings: Vec::new(),
                version: env!("CARGO_PKG_VERSION"),
                started: now.to_rfc3339(),
            },
        })
    }

    /// Path of a new artifact inside the run directory, recorded in the manifest.
    pub fn artifact(&mut self, name: &str) -> PathBuf {
        self.manifest.artifacts.push(name.to_string());
        self.dir.join(name)
    }

    pub fn warn(&mut self, msg: String) {
        eprintln!("warning: {msg}");
        self.manifest.warnings.push(msg);
    }

    pub fn finish(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.manifest).map_err(std::io::Error::other)?;
        std::fs::write(self.dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}
