//! File formats: covariance (CSV or JSON), sample CSV, step-record dumps,
//! and JSON reports.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ggm::SolverReport;
use crate::node_model::{SampleSet, StepRecord};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_string(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Headerless comma-separated rows of floats.
fn parse_csv_rows(text: &str, origin: &str) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("{origin}: {e}")))?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    Error::Parse(format!("{origin}:{line}: `{field}` is not a number"))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn square_from_rows(rows: Vec<Vec<f64>>, origin: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Parse(format!("{origin}: empty matrix")));
    }
    if let Some((k, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(Error::Shape(format!(
            "{origin}: row {} has {} entries, expected {n}",
            k + 1,
            row.len()
        )));
    }
    Ok(DMatrix::from_row_iterator(n, n, rows.into_iter().flatten()))
}

#[derive(Debug, Serialize, Deserialize)]
struct MatrixJson {
    n: usize,
    data: Vec<f64>,
}

/// Reads a square matrix from a `.json` file `{"n": int, "data": [row-major]}`
/// or otherwise from a headerless CSV.
pub fn read_covariance(path: &Path) -> Result<DMatrix<f64>> {
    let text = read_to_string(path)?;
    let origin = path.display().to_string();
    if path.extension().is_some_and(|e| e == "json") {
        parse_matrix_json(&text, &origin)
    } else {
        square_from_rows(parse_csv_rows(&text, &origin)?, &origin)
    }
}

pub fn parse_matrix_json(text: &str, origin: &str) -> Result<DMatrix<f64>> {
    let m: MatrixJson =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("{origin}: {e}")))?;
    if m.n == 0 || m.data.len() != m.n * m.n {
        return Err(Error::Shape(format!(
            "{origin}: n = {} needs {} entries, found {}",
            m.n,
            m.n * m.n,
            m.data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(m.n, m.n, &m.data))
}

pub fn matrix_to_json(m: &DMatrix<f64>) -> serde_json::Value {
    serde_json::json!({ "n": m.nrows(), "data": row_major(m) })
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Reads a vector from a JSON array or a one-row (or one-column) CSV.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = read_to_string(path)?;
    let origin = path.display().to_string();
    if path.extension().is_some_and(|e| e == "json") {
        return serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{origin}: {e}")));
    }
    let rows = parse_csv_rows(&text, &origin)?;
    match rows.as_slice() {
        [single] => Ok(single.clone()),
        many if many.iter().all(|r| r.len() == 1) && !many.is_empty() => {
            Ok(many.iter().map(|r| r[0]).collect())
        }
        _ => Err(Error::Shape(format!(
            "{origin}: expected a single row or column"
        ))),
    }
}

/// Sample CSV: a header of node names, then one row per step.
pub fn samples_to_csv(samples: &SampleSet) -> String {
    let mut out = samples.names().join(",");
    out.push('\n');
    for row in samples.values().row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_samples_csv(samples: &SampleSet, path: &Path) -> Result<()> {
    write_string(path, &samples_to_csv(samples))
}

pub fn read_samples_csv(path: &Path) -> Result<SampleSet> {
    let text = read_to_string(path)?;
    let origin = path.display().to_string();
    let (header, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::Parse(format!("{origin}: missing header row")))?;
    let names: Vec<String> = header
        .trim()
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let rows = parse_csv_rows(body, &origin)?;
    if let Some((k, r)) = rows
        .iter()
        .enumerate()
        .find(|(_, r)| r.len() != names.len())
    {
        return Err(Error::Shape(format!(
            "{origin}: data row {} has {} values for {} columns",
            k + 1,
            r.len(),
            names.len()
        )));
    }
    let m = rows.len();
    let values = DMatrix::from_row_iterator(m, names.len(), rows.into_iter().flatten());
    SampleSet::new(values, names)
}

/// JSON layout of a solver report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub n: usize,
    /// Row-major `Ω*`.
    pub omega: Vec<f64>,
    pub objective_trace: Vec<(usize, f64)>,
    pub converged: bool,
    pub iterations: usize,
    pub group_norms: Vec<Option<f64>>,
}

impl From<&SolverReport> for ReportFile {
    fn from(r: &SolverReport) -> Self {
        let omega = r.omega_star.as_matrix();
        ReportFile {
            n: omega.nrows(),
            omega: row_major(omega),
            objective_trace: r.objective_trace.clone(),
            converged: r.converged,
            iterations: r.iterations,
            group_norms: r.group_norms.clone(),
        }
    }
}

impl ReportFile {
    pub fn omega_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.omega)
    }
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_string(path, &to_json_pretty(value)?)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Files of a dump directory, sorted by name: every `.json`/`.jsonl` file.
pub fn dump_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json" || e == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads every step record of a dump directory. Each nonblank line of each
/// file holds one JSON record; errors name the file and line.
pub fn read_dump_dir(dir: &Path) -> Result<Vec<StepRecord>> {
    let files = dump_files(dir)?;
    if files.is_empty() {
        return Err(Error::Parse(format!(
            "{}: no .json or .jsonl record files",
            dir.display()
        )));
    }
    let mut records = Vec::new();
    for file in files {
        let text = read_to_string(&file)?;
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: StepRecord = serde_json::from_str(line).map_err(|e| {
                Error::Parse(format!(
                    "{}:{}: malformed record: {e}",
                    file.display(),
                    k + 1
                ))
            })?;
            records.push(rec);
        }
    }
    if records.is_empty() {
        return Err(Error::Parse(format!(
            "{}: dump contains no records",
            dir.display()
        )));
    }
    Ok(records)
}
