//! Per-run manifest: what ran, with which settings, on which inputs, and
//! what it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, Artifact>,
    /// Only recorded with `--timing`, since it differs between runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<u64>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            seed,
            config: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            wall_clock_ms: None,
        }
    }

    /// Hashes an input file, or every file directly inside an input
    /// directory.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)
                .with_context(|| format!("listing {}", path.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for f in files {
                self.input(&f)?;
            }
            return Ok(());
        }
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs
            .insert(path.display().to_string(), autotag::content_hash(&bytes));
        Ok(())
    }

    /// Records bytes already written to `out/name`.
    pub fn output(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.insert(
            name.to_string(),
            Artifact {
                path: name.to_string(),
                sha256: autotag::content_hash(bytes),
            },
        );
    }

    /// Writes `bytes` to `out/name` and records it.
    pub fn write(&mut self, out: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        let path = out.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.output(name, bytes);
        Ok(())
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        let path = out.join(MANIFEST_FILE);
        std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))
    }
}
