//! Run manifests: inputs, seeds and content hashes of every artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Default, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub verb: String,
    pub config_path: Option<PathBuf>,
    pub config_sha256: Option<String>,
    pub overrides: Vec<String>,
    pub master_seed: Option<u64>,
    /// Named seeds, e.g. `inject/<dataset>` or `split/<i>`.
    pub seeds: BTreeMap<String, u64>,
    /// Artifact path (relative to the output directory) to sha256.
    pub artifacts: BTreeMap<String, String>,
    pub status: String,
}

impl Manifest {
    pub fn new(verb: &str) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            verb: verb.into(),
            status: "ok".into(),
            ..Default::default()
        }
    }

    /// Records the hash of every file under `dir`, keyed relative to `root`.
    pub fn hash_tree(&mut self, root: &Path, dir: &Path) -> Result<()> {
        if !dir.exists() {
            return Ok(());
        }
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
                let p = entry?.path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    self.add_artifact(root, &p)?;
                }
            }
        }
        Ok(())
    }

    pub fn add_artifact(&mut self, root: &Path, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/");
        self.artifacts.insert(rel, file_sha256(path)?);
        Ok(())
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join(format!("manifest-{}.json", self.verb));
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
