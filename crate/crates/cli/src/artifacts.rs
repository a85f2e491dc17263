//! On-disk artifacts: versioned CSV tables and per-stage manifests.
//!
//! Every CSV starts with a comment line
//!
//! ```text
//! # gaptail-csv/1 kind=<kind> key=value ...
//! ```
//!
//! followed by a column header row. Floats are written as `{:.12e}`, missing
//! values as `nan`. A stage directory holds its CSVs and a `manifest.json`
//! listing the SHA-256 of each; directories are never overwritten.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, Stage};
use crate::error::{CliError, Result};

pub const CSV_SCHEMA: &str = "gaptail-csv/1";
pub const MANIFEST_SCHEMA: &str = "gaptail-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.12e}")
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    fmt_f64(v.unwrap_or(f64::NAN))
}

/// A CSV table held in memory until written.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub kind: String,
    /// Extra `key=value` pairs of the header comment, in order.
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(kind: &str, columns: &[&str]) -> Self {
        Self { kind: kind.into(), meta: Vec::new(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.push((key.into(), value.into()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn push_f64(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&v| fmt_f64(v)).collect());
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = format!("# {CSV_SCHEMA} kind={}", self.kind);
        for (k, v) in &self.meta {
            head.push_str(&format!(" {k}={v}"));
        }
        head.push('\n');
        let mut w = csv::WriterBuilder::new().from_writer(head.into_bytes());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory write")
    }

    /// Parse a table, refusing other schema versions and other kinds.
    pub fn parse(bytes: &[u8], kind: &str) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| CliError::Artifact(format!("CSV is not UTF-8: {e}")))?;
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        let mut words = first.strip_prefix("# ").unwrap_or("").split_whitespace();
        let schema = words.next().unwrap_or("");
        if schema != CSV_SCHEMA {
            return Err(CliError::Artifact(format!("CSV schema {schema:?}, expected {CSV_SCHEMA:?}")));
        }
        let mut meta = Vec::new();
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| CliError::Artifact(format!("bad header field {w:?}")))?;
            meta.push((k.to_string(), v.to_string()));
        }
        let found = meta.iter().find(|(k, _)| k == "kind").map(|(_, v)| v.as_str()).unwrap_or("");
        if found != kind {
            return Err(CliError::Artifact(format!("CSV kind {found:?}, expected {kind:?}")));
        }
        meta.retain(|(k, _)| k != "kind");
        let mut r = csv::ReaderBuilder::new().from_reader(rest.as_bytes());
        let columns = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()).map_err(csv_err))
            .collect::<Result<_>>()?;
        Ok(Self { kind: kind.into(), meta, columns, rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CliError::Artifact(format!("{} CSV has no column {name:?}", self.kind)))?;
        self.rows
            .iter()
            .map(|r| r[j].parse::<f64>().map_err(|_| CliError::Artifact(format!("bad number {:?} in column {name}", r[j]))))
            .collect()
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Artifact(format!("malformed CSV: {e}"))
}

/// Front constants carried between stages; unknown ones stay `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifestConstants {
    pub n_mean: f64,
    pub c_star: f64,
    pub lambda_star: f64,
    pub gamma_star: f64,
    pub c_u: Option<f64>,
    pub xbar0: Option<f64>,
}

impl ManifestConstants {
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("constants serialize").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpstreamRef {
    pub stage: Stage,
    pub config_hash: String,
    pub constants_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub stage: Stage,
    pub version: String,
    pub config_hash: String,
    pub law: String,
    pub law_hash: String,
    pub constants: ManifestConstants,
    pub constants_hash: String,
    pub upstream: Vec<UpstreamRef>,
    /// File name to SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
    pub wall_time_s: f64,
    /// The configuration sections the stage ran with.
    pub config: String,
}

impl Manifest {
    pub fn as_upstream(&self) -> UpstreamRef {
        UpstreamRef { stage: self.stage, config_hash: self.config_hash.clone(), constants_hash: self.constants_hash.clone() }
    }
}

/// The directory of one pipeline run; each stage lives in a subdirectory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.name())
    }

    /// Manifest of a completed stage, `None` when the stage has not run.
    pub fn manifest(&self, stage: Stage) -> Result<Option<Manifest>> {
        let path = self.stage_dir(stage).join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Artifact(format!("unreadable manifest {}: {e}", path.display())))?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(CliError::Artifact(format!(
                "manifest {} has schema {:?}, expected {MANIFEST_SCHEMA:?}",
                path.display(),
                m.schema
            )));
        }
        Ok(Some(m))
    }

    pub fn require_manifest(&self, stage: Stage) -> Result<Manifest> {
        self.manifest(stage)?.ok_or_else(|| {
            CliError::Artifact(format!("upstream stage {} has no manifest in {}", stage.name(), self.root.display()))
        })
    }

    /// Read a stage artifact, checking it against the hash in the manifest.
    pub fn read_table(&self, m: &Manifest, file: &str, kind: &str) -> Result<Table> {
        let path = self.stage_dir(m.stage).join(file);
        let bytes = fs::read(&path).map_err(|e| CliError::Artifact(format!("cannot read {}: {e}", path.display())))?;
        let expected = m
            .artifacts
            .get(file)
            .ok_or_else(|| CliError::Artifact(format!("{file} is not listed in the {} manifest", m.stage.name())))?;
        let found = sha256_hex(&bytes);
        if &found != expected {
            return Err(CliError::Artifact(format!("{} changed after it was written: hash {found}, manifest {expected}", path.display())));
        }
        Table::parse(&bytes, kind)
    }

    /// Write a stage's files and manifest into a fresh directory.
    ///
    /// The directory is assembled under a temporary name and renamed into
    /// place, so a stage is either complete or absent.
    pub fn write_stage(&self, mut manifest: Manifest, files: Vec<(String, Vec<u8>)>) -> Result<Manifest> {
        let dir = self.stage_dir(manifest.stage);
        if dir.exists() {
            return Err(CliError::Artifact(format!("{} already exists; run directories are append-only", dir.display())));
        }
        fs::create_dir_all(&self.root)?;
        let tmp = self.root.join(format!(".{}.partial", manifest.stage.name()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir(&tmp)?;
        for (name, bytes) in files {
            manifest.artifacts.insert(name.clone(), sha256_hex(&bytes));
            fs::write(tmp.join(name), bytes)?;
        }
        fs::write(tmp.join(MANIFEST_FILE), json_bytes(&manifest))?;
        fs::rename(&tmp, &dir)?;
        Ok(manifest)
    }
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s.into_bytes()
}
