//! Run artifacts: atomic file writes plus the manifest that records them.
//!
//! Every output goes through a temp-and-rename write so a crash never leaves
//! a half-written file under its final name. The manifest carries enough to
//! check reproducibility offline: two runs whose manifests agree on
//! everything except the clock fields produced byte-identical artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
struct OutputRecord {
    path: String,
    sha256: String,
    bytes: u64,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    input: Option<&'a InputRecord>,
    /// Options as actually used, after defaults and overrides.
    options: &'a BTreeMap<String, serde_json::Value>,
    outputs: &'a [OutputRecord],
    unix_time_seconds: u64,
    wall_clock_seconds: f64,
}

/// Handle on an output directory that collects what gets written there.
pub struct Artifacts {
    dir: PathBuf,
    records: Vec<OutputRecord>,
    started: Instant,
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<PathBuf> {
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    let path = dir.join(name);
    fs::rename(&tmp, &path)?;
    Ok(path)
}

impl Artifacts {
    pub fn create(dir: &Path) -> io::Result<Artifacts> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts { dir: dir.to_path_buf(), records: Vec::new(), started: Instant::now() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<PathBuf> {
        let path = write_atomic(&self.dir, name, bytes)?;
        self.records.push(OutputRecord {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    /// Write `manifest.json` and return the names of everything produced.
    pub fn finish(
        self,
        subcommand: &str,
        input: Option<&InputRecord>,
        options: &BTreeMap<String, serde_json::Value>,
    ) -> io::Result<Vec<String>> {
        let manifest = RunManifest {
            tool: "herglotz",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            input,
            options,
            outputs: &self.records,
            unix_time_seconds: SystemTime::now()
                .duration_since(SystemTime::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write_atomic(&self.dir, "manifest.json", text.as_bytes())?;
        let mut names: Vec<String> = self.records.into_iter().map(|r| r.path).collect();
        names.push("manifest.json".to_string());
        Ok(names)
    }
}
