//! Artifact writers. Every file opens with the run metadata: a `#` comment line
//! in CSV, a `meta` object in JSON, the first line in JSON-lines.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mfg_core::{DiscreteMeasure, Point};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
#[error("cannot write `{path}`: {message}")]
pub struct OutputError {
    pub path: PathBuf,
    pub message: String,
}

fn write_err(path: &Path, e: impl ToString) -> OutputError {
    OutputError {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Meta {
    pub fn new(command: &str, config_sha256: &str, seed: u64) -> Self {
        Meta {
            tool: "mfg",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            config_sha256: config_sha256.into(),
            seed,
        }
    }

    fn comment(&self) -> String {
        format!(
            "# {} {} command={} config_sha256={} seed={}",
            self.tool, self.version, self.command, self.config_sha256, self.seed
        )
    }
}

/// Shortest round-trip decimal; stable across runs and locales.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub struct Artifacts {
    dir: PathBuf,
    meta: Meta,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(dir: &Path, meta: Meta) -> Result<Self, OutputError> {
        std::fs::create_dir_all(dir).map_err(|e| write_err(dir, e))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            meta,
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn create(&mut self, name: &str) -> Result<(PathBuf, BufWriter<File>), OutputError> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| write_err(&path, e))?;
        self.written.push(path.clone());
        Ok((path, BufWriter::new(file)))
    }

    /// `columns` are `(name, unit)` pairs; the header reads `name [unit]`.
    pub fn csv<I>(&mut self, name: &str, columns: &[(&str, &str)], rows: I) -> Result<(), OutputError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let comment = self.meta.comment();
        let (path, mut out) = self.create(name)?;
        writeln!(out, "{comment}").map_err(|e| write_err(&path, e))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(columns.iter().map(|(c, u)| format!("{c} [{u}]")))
            .map_err(|e| write_err(&path, e))?;
        for row in rows {
            w.write_record(&row).map_err(|e| write_err(&path, e))?;
        }
        w.flush().map_err(|e| write_err(&path, e))
    }

    pub fn json(&mut self, name: &str, body: Value) -> Result<(), OutputError> {
        let mut doc = json!({ "meta": self.meta });
        if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
            d.extend(b);
        }
        let (path, mut out) = self.create(name)?;
        serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| write_err(&path, e))?;
        writeln!(out).map_err(|e| write_err(&path, e))?;
        out.flush().map_err(|e| write_err(&path, e))
    }

    pub fn jsonl<I>(&mut self, name: &str, rows: I) -> Result<(), OutputError>
    where
        I: IntoIterator<Item = Value>,
    {
        let head = json!({ "meta": self.meta });
        let (path, mut out) = self.create(name)?;
        for row in std::iter::once(head).chain(rows) {
            serde_json::to_writer(&mut out, &row).map_err(|e| write_err(&path, e))?;
            writeln!(out).map_err(|e| write_err(&path, e))?;
        }
        out.flush().map_err(|e| write_err(&path, e))
    }

    pub fn particles(&mut self, name: &str, m: &DiscreteMeasure) -> Result<(), OutputError> {
        self.csv(
            name,
            PARTICLE_COLUMNS,
            m.iter().map(|(p, w)| vec![num(p[0]), num(p[1]), num(w)]),
        )
    }
}

pub const PARTICLE_COLUMNS: &[(&str, &str)] = &[("x", "length"), ("y", "length"), ("weight", "mass")];

/// Read a particle CSV written by [`Artifacts::particles`].
pub fn read_particles(path: &Path, dim: usize) -> Result<DiscreteMeasure, ConfigError> {
    if !path.exists() {
        return Err(ConfigError::Missing(path.to_path_buf()));
    }
    let bad = |message: String| ConfigError::Invalid {
        key: "measure.path".into(),
        message: format!("{}: {message}", path.display()),
    };
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let mut points: Vec<Point> = Vec::new();
    let mut weights = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |k: usize| -> Result<f64, ConfigError> {
            rec.get(k)
                .ok_or_else(|| bad(format!("row {} has {} fields", i + 1, rec.len())))?
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("row {}: {e}", i + 1)))
        };
        points.push([field(0)?, if dim == 1 { 0.0 } else { field(1)? }]);
        weights.push(field(2)?);
    }
    DiscreteMeasure::normalized(dim, points, weights).map_err(|e| bad(e.to_string()))
}
