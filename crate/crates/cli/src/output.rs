//! Result files: tables as CSV (with header) or JSON, each with a
//! `<file>.meta.json` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::Format;
use mmalora::Result;

pub struct Output {
    dir: PathBuf,
    format: Format,
    command: &'static str,
    config_sha256: String,
    seeds: Vec<u64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Output {
    pub fn new<C: Serialize>(
        dir: &Path,
        format: Format,
        command: &'static str,
        config: &C,
        seeds: &[u64],
    ) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let canonical = serde_json::to_vec(config)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            command,
            config_sha256: sha256_hex(&canonical),
            seeds: seeds.to_vec(),
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    /// Writes `rows` as `<stem>.csv` or `<stem>.json` and its sidecar.
    pub fn table<T: Serialize>(&self, stem: &str, rows: &[T], extra: Value) -> Result<PathBuf> {
        let path = match self.format {
            Format::Csv => {
                let path = self.path(&format!("{stem}.csv"));
                let mut w = csv::Writer::from_path(&path)?;
                for r in rows {
                    w.serialize(r)?;
                }
                w.flush()?;
                path
            }
            Format::Json => {
                let path = self.path(&format!("{stem}.json"));
                fs::write(&path, serde_json::to_string_pretty(rows)?)?;
                path
            }
        };
        self.sidecar(&path, extra)?;
        Ok(path)
    }

    /// Writes a non-tabular file and its sidecar.
    pub fn file(&self, name: &str, contents: &str, extra: Value) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, contents)?;
        self.sidecar(&path, extra)?;
        Ok(path)
    }

    pub fn sidecar(&self, path: &Path, extra: Value) -> Result<()> {
        let meta = json!({
            "tool": "mmalora",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config_sha256": self.config_sha256,
            "seed": self.seeds.first(),
            "seeds": self.seeds,
            "details": extra,
        });
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".meta.json");
        fs::write(path.with_file_name(name), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}
