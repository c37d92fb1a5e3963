//! Artifact emission: CSV tables with header rows, the JSON run manifest,
//! and content hashing for the verifier.
//!
//! Floats print in Rust's shortest round-trip decimal form, and every table
//! is assembled in deterministic row order before touching the filesystem,
//! so a fixed (config, seed) pair yields byte-identical CSVs at any worker
//! count.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// An in-memory CSV table; `finish` renders header + rows with LF endings.
pub struct Csv {
    name: String,
    header: String,
    rows: Vec<String>,
}

impl Csv {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Csv {
            name: name.to_string(),
            header: columns.join(","),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.rows.push(fields.join(","));
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.header);
        s.push('\n');
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }
}

/// Format helper: shortest round-trip decimal.
pub fn f(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub name: String,
    pub sha256: String,
    pub rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    /// Canonical serialization of the parsed config; parsing this string
    /// reproduces the run's configuration exactly.
    pub config_echo: String,
    pub seed: u64,
    pub threads: usize,
    pub check: bool,
    pub crate_version: String,
    pub wall_time_s: f64,
    pub artifacts: Vec<ArtifactRecord>,
}

/// Collects artifacts for one run and writes them (plus the manifest) in one
/// pass at the end.
pub struct Emitter {
    out_dir: PathBuf,
    tables: Vec<Csv>,
    json_docs: Vec<(String, String)>,
}

impl Emitter {
    pub fn new(out_dir: &Path) -> Self {
        Emitter {
            out_dir: out_dir.to_path_buf(),
            tables: Vec::new(),
            json_docs: Vec::new(),
        }
    }

    pub fn add_csv(&mut self, table: Csv) {
        self.tables.push(table);
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, doc: &T) {
        let text = serde_json::to_string_pretty(doc).expect("json serializes");
        self.json_docs.push((name.to_string(), text));
    }

    /// Write everything plus `manifest.json`; returns the manifest.
    pub fn finish(
        self,
        command: &str,
        config_echo: &str,
        seed: u64,
        threads: usize,
        check: bool,
        wall_time_s: f64,
    ) -> std::io::Result<Manifest> {
        fs::create_dir_all(&self.out_dir)?;
        let mut records = Vec::new();
        for t in &self.tables {
            let body = t.render();
            let path = self.out_dir.join(&t.name);
            fs::write(&path, body.as_bytes())?;
            records.push(ArtifactRecord {
                name: t.name.clone(),
                sha256: sha256_hex(body.as_bytes()),
                rows: t.n_rows(),
            });
        }
        for (name, body) in &self.json_docs {
            let path = self.out_dir.join(name);
            fs::write(&path, body.as_bytes())?;
            records.push(ArtifactRecord {
                name: name.clone(),
                sha256: sha256_hex(body.as_bytes()),
                rows: 0,
            });
        }
        let manifest = Manifest {
            command: command.to_string(),
            config_sha256: sha256_hex(config_echo.as_bytes()),
            config_echo: config_echo.to_string(),
            seed,
            threads,
            check,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s,
            artifacts: records,
        };
        fs::write(
            self.out_dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
        Ok(manifest)
    }
}

/// Re-hash the manifest's config echo and artifacts; `Ok(problems)` lists
/// every mismatch found (empty means the directory verifies).
pub fn verify_dir(out_dir: &Path) -> std::io::Result<Vec<String>> {
    let manifest_text = fs::read_to_string(out_dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    let mut problems = Vec::new();
    if sha256_hex(manifest.config_echo.as_bytes()) != manifest.config_sha256 {
        problems.push("config hash mismatch".to_string());
    }
    match crate::config::ExperimentConfig::parse(&manifest.config_echo) {
        Ok(cfg) => {
            if cfg.canonical() != manifest.config_echo {
                problems.push("config echo is not canonical".to_string());
            }
        }
        Err(e) => problems.push(format!("config echo does not parse: {e}")),
    }
    for rec in &manifest.artifacts {
        match fs::read(out_dir.join(&rec.name)) {
            Ok(bytes) => {
                if sha256_hex(&bytes) != rec.sha256 {
                    problems.push(format!("artifact {} hash mismatch", rec.name));
                }
            }
            Err(_) => problems.push(format!("artifact {} missing", rec.name)),
        }
    }
    Ok(problems)
}
