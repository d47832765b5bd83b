//! Artifact writing: CSV tables with a comment header, the run manifest and
//! the catalog cache.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};
use si_rydberg::catalog::Catalog;

use crate::config::RunConfig;
use crate::error::CliError;

/// Mask sentinel for raster cells without a value.
pub const MASK: &str = "NA";

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Shortest round-trip form, so equal floats print identically. Very
/// small or large magnitudes use exponent notation.
pub fn num(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map_or_else(|| MASK.to_string(), num)
}

/// A CSV table held in memory until written.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    comments: Vec<String>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), comments: Vec::new(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn comment(&mut self, key: &str, value: impl ToString) {
        self.comments.push(format!("{key}={}", value.to_string()));
    }

    pub fn row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn render(&self, run: &RunHeader) -> Result<Vec<u8>, CliError> {
        let mut out = Vec::new();
        for line in run.lines().iter().chain(&self.comments) {
            writeln!(out, "# {line}")?;
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))
    }
}

/// Provenance lines every artifact starts with.
#[derive(Debug, Clone)]
pub struct RunHeader {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub catalog_hash: Option<String>,
}

impl RunHeader {
    fn lines(&self) -> Vec<String> {
        vec![
            format!("command={}", self.command),
            format!("config_hash={}", self.config_hash),
            format!("seed={}", self.seed),
            format!("catalog_hash={}", self.catalog_hash.as_deref().unwrap_or(MASK)),
        ]
    }
}

/// Collects the artifacts of one command and writes them with a manifest.
pub struct RunOutput {
    pub dir: PathBuf,
    pub header: RunHeader,
    files: Vec<(String, String)>,
    summary: Vec<(String, String)>,
}

impl RunOutput {
    pub fn new(dir: &Path, command: &str, config: &RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            header: RunHeader {
                command: command.into(),
                config_hash: config.hash(),
                seed: config.run.seed,
                catalog_hash: None,
            },
            files: Vec::new(),
            summary: Vec::new(),
        })
    }

    /// Adds a key to the manifest and prints it.
    pub fn summary(&mut self, key: &str, value: impl ToString) {
        let v = value.to_string();
        say(&format!("{key}: {v}"));
        self.summary.push((key.into(), v));
    }

    pub fn write_table(&mut self, table: &Table) -> Result<PathBuf, CliError> {
        let bytes = table.render(&self.header)?;
        self.write_bytes(&format!("{}.csv", table.name), &bytes)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        atomic_write(&path, bytes)?;
        self.files.push((name.into(), sha256_hex(bytes)));
        Ok(path)
    }

    /// Writes the resolved config and `manifest_<command>.txt`.
    pub fn finish(mut self, config: &RunConfig) -> Result<(), CliError> {
        let resolved = config.to_toml();
        self.write_bytes("config.resolved.toml", resolved.as_bytes())?;
        let mut text = String::new();
        for line in self.header.lines() {
            text.push_str(&line);
            text.push('\n');
        }
        for (k, v) in &self.summary {
            text.push_str(&format!("{k}={v}\n"));
        }
        for (name, h) in &self.files {
            text.push_str(&format!("file.{name}={h}\n"));
        }
        atomic_write(&self.dir.join(format!("manifest_{}.txt", self.header.command)), text.as_bytes())
    }
}

/// Prints a progress line; a closed stdout is not an error.
pub fn say(line: &str) {
    let _ = writeln!(std::io::stdout(), "{line}");
}

/// Write to a sibling temp file, then rename over the target. Concurrent
/// writers each get their own temp file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_extension(format!("{}-{n}.partial", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Whether a cached catalog was reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
}

impl CacheStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Hit => "hit",
            Self::Miss => "miss",
        }
    }
}

pub fn catalog_path(dir: &Path, config: &RunConfig) -> Result<PathBuf, CliError> {
    let species = config.species()?;
    let key = Catalog::config_hash(&species, &config.constants(), &config.catalog_config(&species));
    Ok(dir.join(format!("catalog-{}.bin", &key[..16])))
}

/// Reads the catalog for `config` from `dir`, building and storing it on
/// a miss. An unreadable or corrupted cache file is rebuilt.
pub fn load_or_build_catalog(dir: &Path, config: &RunConfig) -> Result<(Catalog, CacheStatus, PathBuf), CliError> {
    fs::create_dir_all(dir)?;
    let path = catalog_path(dir, config)?;
    if let Ok(bytes) = fs::read(&path) {
        if let Ok(cat) = Catalog::read_from(&mut bytes.as_slice()) {
            return Ok((cat, CacheStatus::Hit, path));
        }
        eprintln!("warning: discarding unreadable catalog {}", path.display());
    }
    let species = config.species()?;
    let cat = Catalog::build(&species, &config.constants(), &config.catalog_config(&species))?;
    let mut buf = Vec::new();
    cat.write_to(&mut buf)?;
    atomic_write(&path, &buf)?;
    Ok((cat, CacheStatus::Miss, path))
}
