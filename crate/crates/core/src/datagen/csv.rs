use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, Dataset, Provenance};
use crate::tensor::io::format_f64;
use crate::tensor::Matrix;

/// Reads `label,feat1,...,featD` rows. A first line whose first token is not
/// numeric is a header. Labels are integers, reindexed densely in sorted
/// order.
pub fn load_csv(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |line: usize, message: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut raw_labels: Vec<i64> = Vec::new();
    let mut features: Vec<f64> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split(',').map(str::trim);
        let first = tokens.next().unwrap_or_default();
        if i == 0 && first.parse::<f64>().is_err() {
            continue;
        }
        let label = first
            .parse::<i64>()
            .map_err(|_| parse_err(lineno, format!("label {first:?} is not an integer")))?;
        let start = features.len();
        for tok in tokens {
            let v = tok
                .parse::<f64>()
                .map_err(|_| parse_err(lineno, format!("feature {tok:?} is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("non-finite feature {tok:?}")));
            }
            features.push(v);
        }
        let found = features.len() - start;
        match width {
            None if found == 0 => return Err(parse_err(lineno, "row has no features".into())),
            None => width = Some(found),
            Some(expected) if expected != found => {
                return Err(DataError::InconsistentWidth {
                    path: path.to_path_buf(),
                    line: lineno,
                    expected,
                    found,
                })
            }
            Some(_) => {}
        }
        raw_labels.push(label);
    }

    let Some(d) = width else {
        return Err(DataError::Empty {
            path: path.to_path_buf(),
        });
    };
    let m = raw_labels.len();
    let dense: BTreeMap<i64, usize> = raw_labels
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(k, l)| (l, k))
        .collect();
    let labels = raw_labels.iter().map(|l| dense[l]).collect();
    // Rows are samples; the dataset stores samples as columns.
    let x = Matrix::from_fn(d, m, |r, c| features[c * d + r]);
    Dataset::new(
        x,
        labels,
        dense.len(),
        Provenance::Csv {
            path: path.to_path_buf(),
        },
    )
}

/// Writes one `label,feat1,...,featD` row per sample, without a header.
pub fn write_csv(path: &Path, dataset: &Dataset) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = String::new();
    let x = dataset.x();
    for (j, label) in dataset.labels().iter().enumerate() {
        out.push_str(&label.to_string());
        for i in 0..x.rows() {
            out.push(',');
            out.push_str(&format_f64(x[(i, j)]));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(out.as_bytes()).map_err(io_err)
}
