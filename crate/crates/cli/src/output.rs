use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Write-once artifact directory with a manifest listing every file.
pub struct OutDir {
    root: PathBuf,
    written: Vec<(String, String)>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        let mut f = fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| format!("refusing to overwrite {}", path.display()))?;
        f.write_all(bytes)?;
        self.written.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> softneg_core::Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn finish(mut self, manifest: Manifest) -> Result<()> {
        let outputs: Vec<Value> = self
            .written
            .iter()
            .map(|(f, h)| json!({ "file": f, "sha256": h }))
            .collect();
        let config_bytes = serde_json::to_vec(&manifest.config)?;
        let doc = json!({
            "tool": "softneg",
            "version": env!("CARGO_PKG_VERSION"),
            "command": manifest.command,
            "seed": manifest.seed,
            "config_sha256": sha256_hex(&config_bytes),
            "config": manifest.config,
            "inputs": manifest.inputs,
            "outputs": outputs,
        });
        self.write_json("manifest.json", &doc)
    }
}

pub struct Manifest {
    pub command: &'static str,
    pub seed: u64,
    pub config: Value,
    pub inputs: Vec<Value>,
}

pub fn input_record(role: &str, path: &Path) -> Result<Value> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(json!({ "role": role, "sha256": sha256_hex(&bytes) }))
}
