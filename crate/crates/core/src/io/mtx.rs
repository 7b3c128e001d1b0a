//! MatrixMarket text format: `real`/`integer`, `general`, in either
//! `coordinate` or `array` layout. Writing always uses `coordinate` with
//! shortest round-trip decimals.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::matrix::{CsrMatrix, DataMatrix};

use super::IoError;

enum Layout {
    Coordinate,
    Array,
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<DataMatrix, IoError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| IoError::file(path, e))?;
    parse_matrix_market(BufReader::new(file), &path.display().to_string())
}

/// Parses from any reader; `source` only labels error messages.
pub fn parse_matrix_market(reader: impl BufRead, source: &str) -> Result<DataMatrix, IoError> {
    let err = |line: usize, msg: String| IoError::Parse {
        origin: source.to_string(),
        line,
        msg,
    };
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let header = header.map_err(|e| err(1, e.to_string()))?;
    let fields: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(err(1, format!("expected `%%MatrixMarket matrix <layout> <field> <symmetry>`, got `{header}`")));
    }
    let layout = match fields[2].as_str() {
        "coordinate" => Layout::Coordinate,
        "array" => Layout::Array,
        other => return Err(err(1, format!("unsupported layout `{other}`"))),
    };
    if fields[3] != "real" && fields[3] != "integer" {
        return Err(err(1, format!("unsupported field `{}`; only real and integer", fields[3])));
    }
    if fields[4] != "general" {
        return Err(err(1, format!("unsupported symmetry `{}`; only general", fields[4])));
    }

    let mut data = lines.filter_map(|(n, l)| match l {
        Ok(l) if l.trim().is_empty() || l.trim_start().starts_with('%') => None,
        Ok(l) => Some(Ok((n, l))),
        Err(e) => Some(Err(err(n, e.to_string()))),
    });

    let (size_line, size) = data.next().ok_or_else(|| err(1, "missing size line".into()))??;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| err(size_line, format!("bad size entry `{t}`"))))
        .collect::<Result<_, _>>()?;
    let parse_value = |n: usize, t: &str| -> Result<f64, IoError> {
        let v: f64 = t.parse().map_err(|_| err(n, format!("bad value `{t}`")))?;
        if !v.is_finite() {
            return Err(err(n, format!("non-finite value `{t}`")));
        }
        if v < 0.0 {
            return Err(IoError::NegativeValue { line: n, value: v });
        }
        Ok(v)
    };

    let (rows, cols, triplets) = match layout {
        Layout::Coordinate => {
            let [rows, cols, nnz] = dims[..] else {
                return Err(err(size_line, "coordinate size line needs `rows cols nnz`".into()));
            };
            let mut triplets = Vec::with_capacity(nnz);
            for item in data.by_ref().take(nnz) {
                let (n, line) = item?;
                let t: Vec<&str> = line.split_whitespace().collect();
                if t.len() != 3 {
                    return Err(err(n, format!("expected `row col value`, got `{line}`")));
                }
                let index = |s: &str, bound: usize, what: &str| -> Result<usize, IoError> {
                    match s.parse::<usize>() {
                        Ok(k) if k >= 1 && k <= bound => Ok(k - 1),
                        _ => Err(err(n, format!("{what} index `{s}` outside 1..={bound}"))),
                    }
                };
                triplets.push((index(t[0], rows, "row")?, index(t[1], cols, "column")?, parse_value(n, t[2])?));
            }
            if triplets.len() != nnz {
                return Err(err(size_line, format!("declared {nnz} entries, found {}", triplets.len())));
            }
            (rows, cols, triplets)
        }
        Layout::Array => {
            let [rows, cols] = dims[..] else {
                return Err(err(size_line, "array size line needs `rows cols`".into()));
            };
            let total = rows
                .checked_mul(cols)
                .ok_or_else(|| err(size_line, format!("dimensions {rows}x{cols} overflow")))?;
            let mut triplets = Vec::new();
            let mut seen = 0;
            for item in data.by_ref().take(total) {
                let (n, line) = item?;
                let v = parse_value(n, line.trim())?;
                // column-major
                if v != 0.0 {
                    triplets.push((seen % rows, seen / rows, v));
                }
                seen += 1;
            }
            if seen != total {
                return Err(err(size_line, format!("declared {total} values, found {seen}")));
            }
            (rows, cols, triplets)
        }
    };
    if let Some(extra) = data.next() {
        let (n, _) = extra?;
        return Err(err(n, "unexpected data after the declared entries".into()));
    }
    Ok(CsrMatrix::from_triplets(rows, cols, &triplets)?.into())
}

pub fn write_matrix_market(path: impl AsRef<Path>, m: &DataMatrix) -> Result<(), IoError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| IoError::file(path, e))?;
    let mut w = BufWriter::new(file);
    format_matrix_market(&mut w, m).map_err(|e| IoError::file(path, e))?;
    w.flush().map_err(|e| IoError::file(path, e))
}

pub fn format_matrix_market(w: &mut impl Write, m: &DataMatrix) -> std::io::Result<()> {
    let mut entries = Vec::new();
    m.for_each_nonzero(|i, j, v| entries.push((i, j, v)));
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", m.rows(), m.cols(), entries.len())?;
    for (i, j, v) in entries {
        writeln!(w, "{} {} {}", i + 1, j + 1, v)?;
    }
    Ok(())
}
