//! File formats: sample/point CSV, JSON models and reports, atomic writes,
//! and content hashing. All float serialization is shortest round-trip
//! decimal, so rereading a file reproduces the exact IEEE-754 doubles.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        IoError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

/// Writes `bytes` to `path` via a temp file in the same directory plus an
/// atomic rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = NamedTempFile::new_in(&dir).map_err(|e| IoError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| IoError::io(path, e))?;
    tmp.flush().map_err(|e| IoError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex_file(path: &Path) -> Result<String, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn float_record(row: &[f64]) -> Vec<String> {
    row.iter().map(|v| format!("{v}")).collect()
}

/// CSV with an arbitrary header and float rows (atomic write).
pub fn write_table_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| IoError::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(IoError::format(
                path,
                format!(
                    "row has {} fields but header has {}",
                    row.len(),
                    header.len()
                ),
            ));
        }
        w.write_record(float_record(row)).map_err(wrap)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| IoError::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Samples CSV: header `x1..xd,y1..yd`, one `(x_i, y_i)` pair per row.
pub fn write_samples_csv(
    path: &Path,
    sites: &[Vec<f64>],
    values: &[Vec<f64>],
) -> Result<(), IoError> {
    let d = sites.first().map_or(0, |x| x.len());
    let dv = values.first().map_or(0, |y| y.len());
    let header: Vec<String> = (1..=d)
        .map(|j| format!("x{j}"))
        .chain((1..=dv).map(|j| format!("y{j}")))
        .collect();
    let rows: Vec<Vec<f64>> = sites
        .iter()
        .zip(values)
        .map(|(x, y)| x.iter().chain(y.iter()).copied().collect())
        .collect();
    if rows.len() != sites.len() {
        return Err(IoError::format(path, "sites/values length mismatch"));
    }
    write_table_csv(path, &header, &rows)
}

/// Points CSV: header `x1..xd`, one point per row.
pub fn write_points_csv(path: &Path, points: &[Vec<f64>]) -> Result<(), IoError> {
    let d = points.first().map_or(0, |x| x.len());
    let header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    write_table_csv(path, &header, points)
}

fn parse_header(path: &Path, header: &csv::StringRecord) -> Result<(usize, usize), IoError> {
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let d = names.iter().take_while(|n| n.starts_with('x')).count();
    let dv = names.len() - d;
    for (j, n) in names.iter().take(d).enumerate() {
        if *n != format!("x{}", j + 1) {
            return Err(IoError::format(
                path,
                format!("expected column 'x{}', found '{n}'", j + 1),
            ));
        }
    }
    for (j, n) in names.iter().skip(d).enumerate() {
        if *n != format!("y{}", j + 1) {
            return Err(IoError::format(
                path,
                format!("expected column 'y{}', found '{n}'", j + 1),
            ));
        }
    }
    if d == 0 {
        return Err(IoError::format(path, "no x columns in header"));
    }
    Ok((d, dv))
}

fn read_float_rows(path: &Path, width: usize) -> Result<(csv::StringRecord, Vec<Vec<f64>>), IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IoError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
    let header = rdr
        .headers()
        .map_err(|e| IoError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?
        .clone();
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| IoError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        if width != 0 && rec.len() != width {
            return Err(IoError::format(
                path,
                format!("row {}: expected {} fields, found {}", idx + 2, width, rec.len()),
            ));
        }
        let row: Result<Vec<f64>, _> = rec.iter().map(|s| s.parse::<f64>()).collect();
        rows.push(row.map_err(|e| {
            IoError::format(path, format!("row {}: {e}", idx + 2))
        })?);
    }
    Ok((header, rows))
}

/// Reads a samples CSV, returning `(sites, values)`.
pub fn read_samples_csv(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), IoError> {
    let (header, rows) = read_float_rows(path, 0)?;
    let (d, dv) = parse_header(path, &header)?;
    if dv == 0 {
        return Err(IoError::format(path, "no y columns in header"));
    }
    for (idx, row) in rows.iter().enumerate() {
        if row.len() != d + dv {
            return Err(IoError::format(
                path,
                format!("row {}: expected {} fields, found {}", idx + 2, d + dv, row.len()),
            ));
        }
    }
    let sites = rows.iter().map(|r| r[..d].to_vec()).collect();
    let values = rows.iter().map(|r| r[d..].to_vec()).collect();
    Ok((sites, values))
}

/// Reads a points CSV (header `x1..xd` — trailing y columns are rejected).
pub fn read_points_csv(path: &Path) -> Result<Vec<Vec<f64>>, IoError> {
    let (header, rows) = read_float_rows(path, 0)?;
    let (d, dv) = parse_header(path, &header)?;
    if dv != 0 {
        return Err(IoError::format(
            path,
            "expected a points file with only x columns",
        ));
    }
    for (idx, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(IoError::format(
                path,
                format!("row {}: expected {d} fields, found {}", idx + 2, row.len()),
            ));
        }
    }
    Ok(rows)
}
