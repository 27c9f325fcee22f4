//! On-disk formats: SPFLD01 field snapshots, the trajectory manifest and
//! CSV tables.
//!
//! An SPFLD01 file is a 24-byte header (`b"SPFLD01\0"`, `n` as `u64`, `t` as
//! `f64`) followed by `n` samples as `f64`, all little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"SPFLD01\0";
pub const HEADER_LEN: usize = 24;

pub fn write_field(path: &Path, t: f64, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    w.write_all(&t.to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Returns `(t, samples)`.
pub fn read_field(path: &Path) -> Result<(f64, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    if header[..8] != MAGIC {
        return Err(Error::Format(format!("{}: bad magic", path.display())));
    }
    let n = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let t = f64::from_le_bytes(header[16..24].try_into().unwrap());
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != 8 * n {
        return Err(Error::Format(format!(
            "{}: expected {n} samples, found {} bytes",
            path.display(),
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((t, values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub t: f64,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub trajectory_hash: String,
    pub code_version: String,
    pub snapshots: Vec<SnapshotEntry>,
}

pub const MANIFEST: &str = "manifest.json";

impl Manifest {
    pub fn read(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST), self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Shortest-roundtrip is not fixed width; CSV cells use 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// CSV table with a `# config_hash=` comment line and a mandatory header row.
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        CsvTable {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn push_nums(&mut self, row: impl IntoIterator<Item = f64>) {
        self.push(row.into_iter().map(fmt_num).collect());
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self, config_hash: &str) -> String {
        let mut out = format!("# config_hash={config_hash}\n");
        out.push_str(&self.header.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path, config_hash: &str) -> Result<()> {
        std::fs::write(path, self.render(config_hash))?;
        Ok(())
    }
}

/// Parsed CSV: the config hash line, header and raw cells.
#[derive(Clone, Debug)]
pub struct CsvData {
    pub config_hash: Option<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvData {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        self.rows.iter().map(|r| r[k].parse().ok()).collect()
    }
}

pub fn read_csv(path: &Path) -> Result<CsvData> {
    let text = std::fs::read_to_string(path)?;
    let mut hash = None;
    let mut lines = text.lines().filter(|l| {
        if let Some(h) = l.strip_prefix("# config_hash=") {
            hash = Some(h.to_string());
            false
        } else {
            !l.starts_with('#')
        }
    });
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: missing header", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect::<Vec<_>>();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok(CsvData {
        config_hash: hash,
        header,
        rows,
    })
}
