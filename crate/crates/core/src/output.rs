//! Result files: atomic writes and provenance-stamped JSON.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serializing {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl OutputError {
    pub fn is_io(&self) -> bool {
        matches!(self, OutputError::Io { .. })
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct TableError {
    pub line: usize,
    pub message: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses comma-separated numeric rows with exactly `columns` fields. A
/// non-numeric first row is a header; blank lines and `#` comments are
/// skipped.
pub fn parse_numeric_table(text: &str, columns: usize) -> Result<Vec<Vec<f64>>, TableError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let err = |message: String| TableError { line: i + 1, message };
        let cells: Vec<&str> = t.split(',').map(str::trim).collect();
        if cells.len() != columns {
            return Err(err(format!("expected {columns} fields, got {}", cells.len())));
        }
        let parsed: Result<Vec<f64>, _> = cells.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if rows.is_empty() && i == 0 => continue,
            Err(e) => return Err(err(e.to_string())),
        }
    }
    Ok(rows)
}

/// `name.ext` becomes `name.ext.partial`.
pub fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Writes to `<path>.partial` and renames into place once complete. A
/// failed write leaves only the `.partial` file behind.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<(), OutputError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let tmp = partial_path(path);
    let io = |source| OutputError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let file = File::create(&tmp).map_err(io)?;
    let mut w = BufWriter::new(file);
    fill(&mut w).map_err(io)?;
    let file = w.into_inner().map_err(|e| io(e.into_error()))?;
    file.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// Where a result came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 of the canonical configuration text; empty when the command
    /// took no configuration.
    pub config_sha256: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(command: &str, config_sha256: impl Into<String>, seed: Option<u64>) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256: config_sha256.into(),
            seed,
        }
    }
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    result: &'a T,
}

/// Pretty JSON of `result`'s fields plus a `provenance` object.
pub fn write_json<T: Serialize>(path: &Path, provenance: &Provenance, result: &T) -> Result<(), OutputError> {
    let text = serde_json::to_string_pretty(&Stamped { provenance, result }).map_err(|source| OutputError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_atomic(path, |w| {
        w.write_all(text.as_bytes())?;
        w.write_all(b"\n")
    })
}

/// Comma-separated rows under a header.
pub fn write_table<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), OutputError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: std::fmt::Display,
{
    write_atomic(path, |w| {
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            let mut first = true;
            for cell in row {
                if !first {
                    w.write_all(b",")?;
                }
                write!(w, "{cell}")?;
                first = false;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_table_skips_header() {
        let rows = parse_numeric_table("a,b\n1,2\n\n# c\n3,4e-1\n", 2).unwrap();
        assert_eq!(rows, vec![vec![1.0, 2.0], vec![3.0, 0.4]]);
        assert_eq!(parse_numeric_table("1,2\nx,3\n", 2).unwrap_err().line, 2);
        assert_eq!(parse_numeric_table("1,2,3\n", 2).unwrap_err().line, 1);
    }

    #[test]
    fn atomic_write_renames() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out/a.csv");
        write_table(&p, &["x", "y"], [[1.0, 2.0], [3.0, 4.5]]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "x,y\n1,2\n3,4.5\n");
        assert!(!partial_path(&p).exists());
    }

    #[test]
    fn failed_write_leaves_only_partial() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.json");
        let r = write_atomic(&p, |w| {
            w.write_all(b"half")?;
            Err(std::io::Error::other("boom"))
        });
        assert!(r.unwrap_err().is_io());
        assert!(!p.exists());
        assert!(partial_path(&p).exists());
    }

    #[test]
    fn json_carries_provenance() {
        #[derive(Serialize)]
        struct R {
            ratio: f64,
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        write_json(&p, &Provenance::new("x", "abc", Some(3)), &R { ratio: 2.0 }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["provenance"]["config_sha256"], "abc");
        assert_eq!(v["provenance"]["seed"], 3);
        assert_eq!(v["ratio"], 2.0);
    }
}
