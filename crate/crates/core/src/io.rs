//! File formats: system JSON, scenario and cost CSV, model and report JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::grid::PowerSystem;
use crate::scenarios::{ScenarioError, ScenarioMatrix};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: parse error: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{path}: schema error: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("{path}: invariant violation: {message}")]
    InvariantViolation { path: PathBuf, message: String },
}

impl IoError {
    pub fn kind(&self) -> &'static str {
        match self {
            IoError::Io { .. } => "io",
            IoError::Parse { .. } => "parse",
            IoError::Schema { .. } => "schema",
            IoError::InvariantViolation { .. } => "invariant",
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(|source| IoError::Io { path: path.into(), source })
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(|source| IoError::Io { path: path.into(), source })
}

/// Read a JSON document, separating syntax errors from shape errors.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => IoError::Schema {
                path: path.into(),
                message: format!("{e}"),
            },
            _ => IoError::Parse { path: path.into(), line: e.line(), column: e.column(), message: e.to_string() },
        }
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| IoError::Io { path: path.into(), source: std::io::Error::other(e) })?;
    use std::io::Write;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|source| IoError::Io { path: path.into(), source })
}

pub fn load_system(path: &Path) -> Result<PowerSystem, IoError> {
    let system: PowerSystem = read_json(path)?;
    system.validate().map_err(|e| IoError::InvariantViolation { path: path.into(), message: e.to_string() })?;
    Ok(system)
}

pub fn save_system(path: &Path, system: &PowerSystem) -> Result<(), IoError> {
    write_json(path, system)
}

/// Read a numeric CSV with a header row; values must be finite.
pub fn load_matrix(path: &Path) -> Result<ScenarioMatrix, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let labels: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let width = labels.len();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        if rec.len() != width {
            return Err(IoError::Schema {
                path: path.into(),
                message: format!("line {line}: {} fields, header has {width}", rec.len()),
            });
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, field)| match field.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(IoError::Parse {
                    path: path.into(),
                    line,
                    column: c + 1,
                    message: format!("`{field}` in column {} is not a finite number", labels[c]),
                }),
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    Ok(ScenarioMatrix { labels, rows })
}

/// Read a scenario CSV whose header must match the system's `w{farm}_t{hour}` labels.
pub fn load_scenarios(path: &Path, system: &PowerSystem) -> Result<ScenarioMatrix, IoError> {
    let m = load_matrix(path)?;
    m.validate(system).map_err(|e| match e {
        ScenarioError::Label { .. } | ScenarioError::Width { .. } => {
            IoError::Schema { path: path.into(), message: e.to_string() }
        }
        ScenarioError::Value { row, column, label, value } => IoError::InvariantViolation {
            path: path.into(),
            message: format!("data row {} (line {}), column {} ({label}): wind value {value} is negative or not finite", row + 1, row + 2, column + 1),
        },
        other => IoError::InvariantViolation { path: path.into(), message: other.to_string() },
    })?;
    Ok(m)
}

pub fn save_scenarios(path: &Path, m: &ScenarioMatrix) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let wrap = |e: csv::Error| IoError::Io { path: path.into(), source: std::io::Error::other(e) };
    w.write_record(&m.labels).map_err(wrap)?;
    for r in &m.rows {
        w.write_record(r.iter().map(|v| format!("{v}"))).map_err(wrap)?;
    }
    w.flush().map_err(|source| IoError::Io { path: path.into(), source })
}

/// Cost CSV: `row,cost` with one line per scenario; failed rows carry an empty cost.
pub fn save_costs(path: &Path, costs: &[Option<f64>]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let wrap = |e: csv::Error| IoError::Io { path: path.into(), source: std::io::Error::other(e) };
    w.write_record(["row", "cost"]).map_err(wrap)?;
    for (i, c) in costs.iter().enumerate() {
        let v = c.map(|v| format!("{v}")).unwrap_or_default();
        w.write_record([i.to_string(), v]).map_err(wrap)?;
    }
    w.flush().map_err(|source| IoError::Io { path: path.into(), source })
}

pub fn load_costs(path: &Path) -> Result<Vec<Option<f64>>, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let col = headers.iter().position(|h| h == "cost").ok_or_else(|| IoError::Schema {
        path: path.into(),
        message: "missing `cost` column".into(),
    })?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let field = rec.get(col).unwrap_or("");
        if field.is_empty() {
            out.push(None);
            continue;
        }
        let v = field.parse::<f64>().map_err(|_| IoError::Parse {
            path: path.into(),
            line: i + 2,
            column: col + 1,
            message: format!("`{field}` is not a number"),
        })?;
        out.push(Some(v));
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> IoError {
    let (line, column) = e.position().map_or((0, 0), |p| (p.line() as usize, 0));
    IoError::Parse { path: path.into(), line, column, message: e.to_string() }
}
