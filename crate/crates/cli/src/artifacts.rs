//! Run directories and their checksummed manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub status: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub started_unix_ms: u128,
    pub finished_unix_ms: Option<u128>,
    pub files: Vec<FileEntry>,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

/// Owns a run directory. The manifest is written when the run opens and
/// rewritten with checksums of every emitted file when it closes.
pub struct RunDir {
    root: PathBuf,
    manifest: RunManifest,
    files: Vec<String>,
}

impl RunDir {
    pub fn open<C: Serialize>(root: &Path, command: &str, seed: u64, config: &C) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            status: "running".into(),
            seed,
            config: serde_json::to_value(config)?,
            started_unix_ms: now_ms(),
            finished_unix_ms: None,
            files: Vec::new(),
        };
        let dir = Self {
            root: root.to_path_buf(),
            manifest,
            files: Vec::new(),
        };
        dir.write_manifest()?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Path for an artifact, registering it for the manifest.
    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn write_manifest(&self) -> Result<()> {
        let mut s = serde_json::to_string_pretty(&self.manifest)?;
        s.push('\n');
        fs::write(self.root.join(MANIFEST), s)?;
        Ok(())
    }

    pub fn finish(mut self, status: &str) -> Result<RunManifest> {
        let mut entries = Vec::with_capacity(self.files.len());
        let mut names = self.files.clone();
        names.sort();
        for name in names {
            let (sha256, bytes) = sha256_file(&self.root.join(&name))?;
            entries.push(FileEntry { path: name, sha256, bytes });
        }
        self.manifest.files = entries;
        self.manifest.status = status.into();
        self.manifest.finished_unix_ms = Some(now_ms());
        self.write_manifest()?;
        Ok(self.manifest)
    }
}

pub fn read_manifest(root: &Path) -> Result<RunManifest> {
    let p = root.join(MANIFEST);
    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Paths of listed files whose checksum no longer matches.
pub fn verify_manifest(root: &Path) -> Result<Vec<String>> {
    let m = read_manifest(root)?;
    let mut bad = Vec::new();
    for f in &m.files {
        match sha256_file(&root.join(&f.path)) {
            Ok((h, n)) if h == f.sha256 && n == f.bytes => {}
            _ => bad.push(f.path.clone()),
        }
    }
    Ok(bad)
}
