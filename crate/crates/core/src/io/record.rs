use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::MetricReport;
use crate::model::{FactorModel, Hyperparams};
use crate::solvers::{IterationTrace, SolverConfig};

use super::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub documents: MetricReport,
    pub words: MetricReport,
}

/// Everything needed to inspect or re-evaluate one solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub config: SolverConfig,
    pub hyperparams: Hyperparams,
    pub trace: IterationTrace,
    /// Objective increases beyond `1e-9 * objective[0]`.
    pub violations: usize,
    #[serde(default)]
    pub metrics: Option<RunMetrics>,
    /// RFC 3339.
    pub started_at: String,
    pub finished_at: String,
    /// Set when the run stopped early with an error; the trace is partial.
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub model: Option<FactorModel>,
}

impl RunRecord {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        let path = path.as_ref();
        let json = |e| IoError::Json {
            path: path.to_path_buf(),
            source: e,
        };
        let file = File::create(path).map_err(|e| IoError::file(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self).map_err(json)?;
        writeln!(w).map_err(|e| IoError::file(path, e))?;
        w.flush().map_err(|e| IoError::file(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| IoError::file(path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| IoError::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::DenseMatrix;
    use crate::solvers::Algorithm;

    #[test]
    fn json_round_trip_keeps_every_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let report = MetricReport {
            mutual_information: 0.1 + 0.2,
            entropy: 1.0 / 3.0,
            purity: 0.75,
            fmeasure: 2.0f64.sqrt() / 2.0,
        };
        let record = RunRecord {
            dataset: "toy".into(),
            config: SolverConfig::with_algorithm(Algorithm::MurBnmtf),
            hyperparams: Hyperparams::new(0.1, 1.0, 2, 2),
            trace: IterationTrace {
                objective: vec![10.0, 1e-300, 5e-324],
                inner_counts: vec![[0, 0, 0], [1, 2, 3], [0, 0, 7]],
                kkt_overall: vec![0.7, 0.3, 0.1],
                wall_ms: vec![0.0, 0.123456789, 1.5],
                converged_at: Some(2),
                clamped_entries: 4,
            },
            violations: 1,
            metrics: Some(RunMetrics {
                documents: report,
                words: report,
            }),
            started_at: "2026-01-01T00:00:00Z".into(),
            finished_at: "2026-01-01T00:00:01Z".into(),
            error: Some("stopped".into()),
            model: Some(
                FactorModel::new(
                    DenseMatrix::from_rows(&[[0.1, 0.7]]),
                    DenseMatrix::identity(2),
                    DenseMatrix::from_rows(&[[1.0 / 7.0], [2.0]]),
                )
                .unwrap(),
            ),
        };
        record.write(&path).unwrap();
        assert_eq!(RunRecord::read(&path).unwrap(), record);
    }
}
