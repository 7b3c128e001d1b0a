//! Cluster assignments read off factor matrices, and the MI / entropy /
//! purity / F-measure scores used to compare them with reference classes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{DataMatrix, DenseMatrix};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusteringError {
    #[error("cannot assign clusters from an empty {rows}x{cols} matrix")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("label {label} at item {item} is outside [0, {n_clusters})")]
    LabelOutOfRange { item: usize, label: usize, n_clusters: usize },
    #[error("length mismatch: {what} has {got} items, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("cannot evaluate an empty assignment")]
    Empty,
}

/// One cluster index per item, each in `[0, n_clusters)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    labels: Vec<usize>,
    n_clusters: usize,
}

impl Assignment {
    pub fn new(labels: Vec<usize>, n_clusters: usize) -> Result<Self, ClusteringError> {
        if let Some((item, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= n_clusters) {
            return Err(ClusteringError::LabelOutOfRange {
                item,
                label,
                n_clusters,
            });
        }
        Ok(Assignment { labels, n_clusters })
    }

    /// `n_clusters` is one more than the largest label.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let n_clusters = labels.iter().max().map_or(0, |&m| m + 1);
        Assignment { labels, n_clusters }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// One item per column: `argmax_q F[q, n]`. Documents from `C`.
    Columns,
    /// One item per row: `argmax_p F[m, p]`. Words from `B`.
    Rows,
}

/// Argmax along the factor dimension, ties to the lowest index.
pub fn assign_from_factor(f: &DenseMatrix, axis: Axis) -> Result<Assignment, ClusteringError> {
    let (rows, cols) = f.shape();
    if rows == 0 || cols == 0 {
        return Err(ClusteringError::EmptyMatrix { rows, cols });
    }
    let (items, k) = match axis {
        Axis::Columns => (cols, rows),
        Axis::Rows => (rows, cols),
    };
    let labels = (0..items)
        .map(|item| {
            let value = |j| match axis {
                Axis::Columns => f.get(j, item),
                Axis::Rows => f.get(item, j),
            };
            argmax((0..k).map(value))
        })
        .collect();
    Ok(Assignment { labels, n_clusters: k })
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Word classes derived from document classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordClasses {
    pub assignment: Assignment,
    /// Words whose row of `A` is entirely zero; they are put in class 0.
    pub zero_rows: usize,
}

/// Each word goes to the class whose documents contain it most often in
/// aggregate. Ties go to the lowest class index.
pub fn word_reference_classes(a: &DataMatrix, doc_labels: &Assignment) -> Result<WordClasses, ClusteringError> {
    let (m, n) = a.shape();
    if doc_labels.len() != n {
        return Err(ClusteringError::LengthMismatch {
            what: "document labels",
            got: doc_labels.len(),
            expected: n,
        });
    }
    let k = doc_labels.n_clusters().max(1);
    let mut totals = vec![0.0; m * k];
    a.for_each_nonzero(|i, j, v| totals[i * k + doc_labels.labels[j]] += v);
    let mut zero_rows = 0;
    let labels = totals
        .chunks(k)
        .map(|row| {
            if row.iter().all(|&v| v == 0.0) {
                zero_rows += 1;
            }
            argmax(row.iter().copied())
        })
        .collect();
    Ok(WordClasses {
        assignment: Assignment { labels, n_clusters: k },
        zero_rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// In bits, not normalized.
    pub mutual_information: f64,
    /// Size-weighted cluster entropy, logarithm base = number of classes.
    pub entropy: f64,
    pub purity: f64,
    pub fmeasure: f64,
}

/// `counts[k][c]` of items in cluster `k` with class `c`.
pub fn contingency(pred: &Assignment, truth: &Assignment) -> Result<Vec<Vec<usize>>, ClusteringError> {
    if pred.len() != truth.len() {
        return Err(ClusteringError::LengthMismatch {
            what: "predicted labels",
            got: pred.len(),
            expected: truth.len(),
        });
    }
    let mut counts = vec![vec![0usize; truth.n_clusters()]; pred.n_clusters()];
    for (&k, &c) in pred.labels.iter().zip(&truth.labels) {
        counts[k][c] += 1;
    }
    Ok(counts)
}

pub fn evaluate(pred: &Assignment, truth: &Assignment) -> Result<MetricReport, ClusteringError> {
    let counts = contingency(pred, truth)?;
    if pred.is_empty() {
        return Err(ClusteringError::Empty);
    }
    Ok(metrics_from_counts(&counts))
}

/// Scores from a cluster-by-class count table.
pub fn metrics_from_counts(counts: &[Vec<usize>]) -> MetricReport {
    let n_classes = counts.first().map_or(0, Vec::len);
    let cluster_sizes: Vec<usize> = counts.iter().map(|row| row.iter().sum()).collect();
    let class_sizes: Vec<usize> = (0..n_classes).map(|c| counts.iter().map(|row| row[c]).sum()).collect();
    let n: usize = cluster_sizes.iter().sum();
    let nf = n as f64;
    if n == 0 {
        return MetricReport {
            mutual_information: 0.0,
            entropy: 0.0,
            purity: 0.0,
            fmeasure: 0.0,
        };
    }

    let mut mi = 0.0;
    for (row, &nk) in counts.iter().zip(&cluster_sizes) {
        for (&nkc, &nc) in row.iter().zip(&class_sizes) {
            if nkc > 0 {
                let pkc = nkc as f64 / nf;
                mi += pkc * (pkc / ((nk as f64 / nf) * (nc as f64 / nf))).log2();
            }
        }
    }

    let present = class_sizes.iter().filter(|&&nc| nc > 0).count();
    let mut entropy = 0.0;
    if present > 1 {
        let log_base = (present as f64).ln();
        for (row, &nk) in counts.iter().zip(&cluster_sizes) {
            let h: f64 = row
                .iter()
                .filter(|&&nkc| nkc > 0)
                .map(|&nkc| {
                    let p = nkc as f64 / nk as f64;
                    -p * p.ln() / log_base
                })
                .sum();
            entropy += nk as f64 / nf * h;
        }
    }

    let purity = counts.iter().map(|row| row.iter().copied().max().unwrap_or(0)).sum::<usize>() as f64 / nf;

    let mut fmeasure = 0.0;
    for (c, &nc) in class_sizes.iter().enumerate() {
        if nc == 0 {
            continue;
        }
        let best = counts
            .iter()
            .zip(&cluster_sizes)
            .filter(|(row, _)| row[c] > 0)
            .map(|(row, &nk)| {
                let precision = row[c] as f64 / nk as f64;
                let recall = row[c] as f64 / nc as f64;
                2.0 * precision * recall / (precision + recall)
            })
            .fold(0.0, f64::max);
        fmeasure += nc as f64 / nf * best;
    }

    MetricReport {
        mutual_information: mi.max(0.0),
        entropy,
        purity,
        fmeasure,
    }
}
