//! Files on disk: MatrixMarket matrices, label and trace CSVs, run records,
//! and synthetic dataset directories.

mod mtx;
mod record;
mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{Assignment, ClusteringError};
use crate::matrix::{DataMatrix, MatrixError};
use crate::solvers::IterationTrace;

pub use mtx::{format_matrix_market, parse_matrix_market, read_matrix_market, write_matrix_market};
pub use record::{RunMetrics, RunRecord};
pub use synthetic::{gen_synthetic, SyntheticParams};

pub const MATRIX_FILE: &str = "matrix.mtx";
pub const LABELS_FILE: &str = "labels.csv";
pub const WORD_LABELS_FILE: &str = "word_labels.csv";
pub const TRACE_HEADER: [&str; 7] = ["iter", "objective", "inner_b", "inner_c", "inner_s", "kkt", "ms"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line}: {msg}")]
    Parse { origin: String, line: usize, msg: String },
    #[error("line {line}: negative value {value}; input matrices must be nonnegative")]
    NegativeValue { line: usize, value: f64 },
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
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error("{0}")]
    Invalid(String),
}

impl IoError {
    pub(crate) fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File {
            path: path.to_path_buf(),
            source,
        }
    }

    fn csv(path: &Path, source: csv::Error) -> Self {
        IoError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// A data matrix with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub matrix: DataMatrix,
    /// One class per column (document).
    pub doc_labels: Option<Assignment>,
    /// One class per row (word).
    pub word_labels: Option<Assignment>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        matrix: DataMatrix,
        doc_labels: Option<Assignment>,
        word_labels: Option<Assignment>,
    ) -> Result<Self, IoError> {
        let (m, n) = matrix.shape();
        for (labels, expected, what) in [(&doc_labels, n, "document labels"), (&word_labels, m, "word labels")] {
            if let Some(l) = labels {
                if l.len() != expected {
                    return Err(ClusteringError::LengthMismatch {
                        what,
                        got: l.len(),
                        expected,
                    }
                    .into());
                }
            }
        }
        Ok(Dataset {
            name: name.into(),
            matrix,
            doc_labels,
            word_labels,
        })
    }
}

/// Writes `matrix.mtx`, plus `labels.csv` and `word_labels.csv` when present.
pub fn write_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<(), IoError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    write_matrix_market(dir.join(MATRIX_FILE), &ds.matrix)?;
    if let Some(l) = &ds.doc_labels {
        write_labels(dir.join(LABELS_FILE), l)?;
    }
    if let Some(l) = &ds.word_labels {
        write_labels(dir.join(WORD_LABELS_FILE), l)?;
    }
    Ok(())
}

/// Reads a dataset directory, or a bare `.mtx` file without labels.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, IoError> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    if !path.is_dir() {
        return Dataset::new(name, read_matrix_market(path)?, None, None);
    }
    let matrix = read_matrix_market(path.join(MATRIX_FILE))?;
    let optional = |file: &str| -> Result<Option<Assignment>, IoError> {
        let p = path.join(file);
        if p.exists() {
            read_labels(&p).map(Some)
        } else {
            Ok(None)
        }
    };
    Dataset::new(name, matrix, optional(LABELS_FILE)?, optional(WORD_LABELS_FILE)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    item_id: usize,
    label: usize,
}

pub fn write_labels(path: impl AsRef<Path>, labels: &Assignment) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| IoError::csv(path, e))?;
    for (item_id, &label) in labels.labels().iter().enumerate() {
        w.serialize(LabelRow { item_id, label }).map_err(|e| IoError::csv(path, e))?;
    }
    w.flush().map_err(|e| IoError::file(path, e))
}

/// Reads `item_id,label` rows. Every id in `0..len` must appear exactly once;
/// rows may come in any order.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Assignment, IoError> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| IoError::csv(path, e))?;
    let rows: Vec<LabelRow> = r.deserialize().collect::<Result<_, _>>().map_err(|e| IoError::csv(path, e))?;
    let mut labels = vec![None; rows.len()];
    for row in &rows {
        match labels.get_mut(row.item_id) {
            Some(slot @ None) => *slot = Some(row.label),
            Some(Some(_)) => {
                return Err(IoError::Invalid(format!("{}: item_id {} repeated", path.display(), row.item_id)))
            }
            None => {
                return Err(IoError::Invalid(format!(
                    "{}: item_id {} outside 0..{}",
                    path.display(),
                    row.item_id,
                    rows.len()
                )))
            }
        }
    }
    Ok(Assignment::from_labels(labels.into_iter().flatten().collect()))
}

/// One row of a trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub inner_b: usize,
    pub inner_c: usize,
    pub inner_s: usize,
    pub kkt: f64,
    pub ms: f64,
}

/// Trace rows; `ms` is written as 0 unless `timing` is set, so that repeated
/// runs give identical files.
pub fn trace_rows(trace: &IterationTrace, timing: bool) -> Vec<TraceRow> {
    (0..trace.objective.len())
        .map(|k| {
            let [inner_b, inner_c, inner_s] = trace.inner_counts[k];
            TraceRow {
                iter: k,
                objective: trace.objective[k],
                inner_b,
                inner_c,
                inner_s,
                kkt: trace.kkt_overall[k],
                ms: if timing { trace.wall_ms[k] } else { 0.0 },
            }
        })
        .collect()
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &IterationTrace, timing: bool) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| IoError::csv(path, e))?;
    for row in trace_rows(trace, timing) {
        w.serialize(row).map_err(|e| IoError::csv(path, e))?;
    }
    w.flush().map_err(|e| IoError::file(path, e))
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<TraceRow>, IoError> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| IoError::csv(path, e))?;
    let header = r.headers().map_err(|e| IoError::csv(path, e))?;
    if header.iter().ne(TRACE_HEADER) {
        return Err(IoError::Invalid(format!(
            "{}: expected columns {}",
            path.display(),
            TRACE_HEADER.join(",")
        )));
    }
    r.deserialize().collect::<Result<_, _>>().map_err(|e| IoError::csv(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::DenseMatrix;

    #[test]
    fn labels_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        let a = Assignment::new(vec![2, 0, 1, 1], 3).unwrap();
        write_labels(&p, &a).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().next(), Some("item_id,label"));
        assert_eq!(read_labels(&p).unwrap(), a);

        fs::write(&p, "item_id,label\n1,0\n0,1\n").unwrap();
        assert_eq!(read_labels(&p).unwrap().labels(), &[1, 0]);
        fs::write(&p, "item_id,label\n0,0\n0,1\n").unwrap();
        assert!(read_labels(&p).is_err());
        fs::write(&p, "item_id,label\n0,0\n5,1\n").unwrap();
        assert!(read_labels(&p).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let trace = IterationTrace {
            objective: vec![3.0, 1.5],
            inner_counts: vec![[0, 0, 0], [2, 1, 0]],
            kkt_overall: vec![0.5, 0.25],
            wall_ms: vec![0.0, 12.5],
            converged_at: None,
            clamped_entries: 0,
        };
        write_trace_csv(&p, &trace, false).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "iter,objective,inner_b,inner_c,inner_s,kkt,ms\n0,3.0,0,0,0,0.5,0.0\n1,1.5,2,1,0,0.25,0.0\n"
        );
        write_trace_csv(&p, &trace, true).unwrap();
        let rows = read_trace_csv(&p).unwrap();
        assert_eq!(rows[1].ms, 12.5);
        assert_eq!(rows, trace_rows(&trace, true));
    }

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DataMatrix::dense(DenseMatrix::from_rows(&[[1.0, 0.0, 2.0], [0.0, 3.0, 0.0]])).unwrap();
        let ds = Dataset::new(
            "d",
            m,
            Some(Assignment::new(vec![0, 1, 0], 2).unwrap()),
            Some(Assignment::new(vec![1, 0], 2).unwrap()),
        )
        .unwrap();
        write_dataset(dir.path().join("d"), &ds).unwrap();
        let back = read_dataset(dir.path().join("d")).unwrap();
        assert_eq!(back.matrix.to_dense(), ds.matrix.to_dense());
        assert_eq!(back.doc_labels, ds.doc_labels);
        assert_eq!(back.word_labels, ds.word_labels);
        assert_eq!(back.name, "d");
    }

    #[test]
    fn dataset_rejects_wrong_label_length() {
        let m = DataMatrix::dense(DenseMatrix::zeros(2, 3)).unwrap();
        assert!(Dataset::new("x", m, Some(Assignment::new(vec![0, 1], 2).unwrap()), None).is_err());
    }
}
