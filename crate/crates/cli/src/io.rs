//! Prediction files and atomic output.
//!
//! CSV files carry a `label,s1,...,sK` header; JSONL files hold one
//! `{"label": <int>, "scores": [..]}` object per line. Labels are 1-based on
//! disk and 0-based in memory.

use std::io::Write;
use std::path::Path;

use focal_calib::{PredictionSet, ProbVector, ScoreKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default tolerance on row sums of probability files.
pub const FILE_SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("line {line}: expected {expected} scores, found {got}")]
    InconsistentK { line: u64, expected: usize, got: usize },
    #[error("line {line}: {msg}")]
    InvalidSimplex { line: u64, msg: String },
    #[error(transparent)]
    Core(#[from] focal_calib::Error),
}

pub type Result<T> = std::result::Result<T, IoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FileFormat {
    Csv,
    Jsonl,
}

impl FileFormat {
    /// `.jsonl` / `.json` / `.ndjson` are JSONL, everything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json" | "ndjson") => FileFormat::Jsonl,
            _ => FileFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    pub kind: ScoreKind,
    pub renormalize: bool,
    pub tolerance: f64,
}

impl LoadOptions {
    pub fn new(kind: ScoreKind) -> Self {
        Self { kind, renormalize: false, tolerance: FILE_SIMPLEX_TOL }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    label: i64,
    scores: Vec<f64>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.display().to_string(), source }
}

pub fn load_predictions(path: &Path, format: FileFormat, opts: LoadOptions) -> Result<PredictionSet> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_predictions(&text, format, opts)
}

pub fn parse_predictions(text: &str, format: FileFormat, opts: LoadOptions) -> Result<PredictionSet> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut k = None;
    let mut push = |line: u64, label: i64, scores: Vec<f64>, k: usize| -> Result<()> {
        if scores.len() != k {
            return Err(IoError::InconsistentK { line, expected: k, got: scores.len() });
        }
        if label < 1 || label as usize > k {
            return Err(IoError::Parse { line, msg: format!("label {label} outside 1..={k}") });
        }
        let scores = match opts.kind {
            ScoreKind::Logits => {
                if scores.iter().any(|s| !s.is_finite()) {
                    return Err(IoError::Parse { line, msg: "non-finite logit".into() });
                }
                scores
            }
            ScoreKind::Probabilities => {
                let checked = if opts.renormalize {
                    ProbVector::renormalized(scores)
                } else {
                    ProbVector::with_tolerance(scores, opts.tolerance)
                };
                checked
                    .map_err(|e| IoError::InvalidSimplex { line, msg: e.to_string() })?
                    .into_inner()
            }
        };
        rows.push(scores);
        labels.push(label as usize - 1);
        Ok(())
    };

    match format {
        FileFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(text.as_bytes());
            let header = reader.headers().map_err(|e| IoError::Parse { line: 1, msg: e.to_string() })?;
            let expected: Vec<String> = std::iter::once("label".to_string())
                .chain((1..header.len()).map(|i| format!("s{i}")))
                .collect();
            if header.len() < 3 || header.iter().ne(expected.iter().map(String::as_str)) {
                return Err(IoError::Parse {
                    line: 1,
                    msg: format!("header must be label,s1,...,sK (K >= 2), got {:?}", header.iter().collect::<Vec<_>>()),
                });
            }
            let width = header.len() - 1;
            k = Some(width);
            for record in reader.records() {
                let record = record.map_err(|e| IoError::Parse {
                    line: e.position().map_or(0, |p| p.line()),
                    msg: e.to_string(),
                })?;
                let line = record.position().map_or(0, |p| p.line());
                let label: i64 = record[0]
                    .parse()
                    .map_err(|_| IoError::Parse { line, msg: format!("bad label {:?}", &record[0]) })?;
                let scores = record
                    .iter()
                    .skip(1)
                    .map(|s| s.parse::<f64>().map_err(|_| IoError::Parse { line, msg: format!("bad score {s:?}") }))
                    .collect::<Result<Vec<f64>>>()?;
                push(line, label, scores, width)?;
            }
        }
        FileFormat::Jsonl => {
            for (i, raw) in text.lines().enumerate() {
                let line = i as u64 + 1;
                if raw.trim().is_empty() {
                    continue;
                }
                let row: JsonRow =
                    serde_json::from_str(raw).map_err(|e| IoError::Parse { line, msg: e.to_string() })?;
                let width = *k.get_or_insert(row.scores.len());
                if width < 2 {
                    return Err(IoError::Parse { line, msg: "need at least 2 scores".into() });
                }
                push(line, row.label, row.scores, width)?;
            }
        }
    }
    let k = k.ok_or(IoError::Core(focal_calib::Error::EmptyData))?;
    // Rows were validated above at the file tolerance.
    Ok(PredictionSet::new(opts.kind, k, rows, labels, f64::INFINITY)?)
}

/// Lossless rendering: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn render_predictions(set: &PredictionSet, format: FileFormat) -> String {
    let mut out = String::new();
    match format {
        FileFormat::Csv => {
            out.push_str("label");
            for i in 1..=set.k() {
                out.push_str(&format!(",s{i}"));
            }
            out.push('\n');
            for (row, y) in set.iter() {
                out.push_str(&(y + 1).to_string());
                for v in row {
                    out.push(',');
                    out.push_str(&fmt_f64(*v));
                }
                out.push('\n');
            }
        }
        FileFormat::Jsonl => {
            for (row, y) in set.iter() {
                let json = serde_json::to_string(&JsonRow { label: y as i64 + 1, scores: row.to_vec() })
                    .expect("finite scores serialize");
                out.push_str(&json);
                out.push('\n');
            }
        }
    }
    out
}

pub fn save_predictions(path: &Path, set: &PredictionSet, format: FileFormat) -> Result<()> {
    write_atomic(path, render_predictions(set, format).as_bytes())
}

/// Writes to a temporary file in the target directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| IoError::Io { path: path.display().to_string(), source: e.error })?;
    Ok(())
}

/// Plain CSV table from a header and numeric rows.
pub fn render_table(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
