//! Artifact files: provenance header, CSV tables and the readers that
//! later subcommands use to pick up earlier results.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use vbma::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance stamped at the top of every artifact.
#[derive(Debug, Clone)]
pub struct Stamp {
    pub seed: u64,
    pub config_hash: String,
}

impl Stamp {
    pub fn line(&self) -> String {
        format!("vbma {VERSION} seed={} config={}", self.seed, self.config_hash)
    }

    /// `# ...` header for CSV and plain-text artifacts.
    pub fn comment(&self) -> String {
        format!("# {}\n", self.line())
    }
}

/// Simple CSV table built in memory. Cells never contain commas or quotes
/// (model names use `+`), so no quoting is needed.
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(stamp: &Stamp, header: &[&str]) -> Self {
        let mut text = stamp.comment();
        text.push_str(&header.join(","));
        text.push('\n');
        Self { text }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Shortest round-trip float formatting.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{x:?}")
    }
}

pub struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)
            .map_err(|e| Error::Config(format!("cannot create output directory `{}`: {e}", root.display())))?;
        Ok(Self { root: root.to_owned(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes through a temporary file so a failed run never leaves a
    /// truncated artifact behind.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        let tmp = self.path(&format!(".{name}.tmp"));
        std::fs::write(&tmp, contents)?;
        std::fs::rename(&tmp, &path)?;
        if !self.written.contains(&path) {
            self.written.push(path);
        }
        Ok(())
    }

    pub fn read(&self, name: &str, produced_by: &str) -> Result<String> {
        let path = self.path(name);
        std::fs::read_to_string(&path).map_err(|_| {
            Error::Config(format!("missing `{}`; run `vbma {produced_by}` with the same --config and --out first", path.display()))
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// Data rows of a CSV artifact: header line split, then records, with
/// comment lines skipped.
pub fn parse_table(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<String> =
        lines.next().ok_or(Error::EmptyDataset)?.split(',').map(|s| s.trim().to_owned()).collect();
    let rows = lines.map(|l| l.split(',').map(|s| s.trim().to_owned()).collect()).collect();
    Ok((header, rows))
}

/// The provenance line of an artifact, if it has one.
pub fn stamp_of(text: &str) -> Option<&str> {
    text.lines().next().and_then(|l| l.strip_prefix("# "))
}

/// Model names and trailing-mean weights from `weights.csv`.
pub fn read_weights(text: &str) -> Result<(Vec<String>, Vec<f64>)> {
    let (header, rows) = parse_table(text)?;
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Parse { line: 2, message: format!("weights table lacks `{name}`") })
    };
    let (m, q) = (col("model")?, col("q")?);
    let mut names = Vec::new();
    let mut weights = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        names.push(r[m].clone());
        weights.push(r[q].parse().map_err(|_| Error::Parse { line: i + 3, message: format!("bad weight `{}`", r[q]) })?);
    }
    Ok((names, weights))
}

/// Checks that an earlier artifact was produced by the same configuration.
pub fn check_stamp(text: &str, name: &str, stamp: &Stamp) -> Result<()> {
    match stamp_of(text) {
        Some(line) if line == stamp.line() => Ok(()),
        Some(line) => Err(Error::Config(format!(
            "`{name}` was produced by a different configuration ({line}); current is {}; rerun `vbma fit`",
            stamp.line()
        ))),
        None => Err(Error::Config(format!("`{name}` has no provenance header"))),
    }
}

/// Formats a list of numbers for a log line.
pub fn list(v: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{x:.4}");
    }
    s
}
