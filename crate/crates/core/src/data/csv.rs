use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{stratified_indices, Dataset, FeatureStats};
use crate::error::{Error, Result};

/// Column layout of a delimited text file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub label_column: usize,
    pub categorical_columns: Vec<usize>,
    pub missing_token: String,
    pub has_header: bool,
    /// Label strings in class-index order; `None` sorts the observed values.
    pub label_classes: Option<Vec<String>>,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            label_column: 0,
            categorical_columns: Vec::new(),
            missing_token: "?".into(),
            has_header: false,
            label_classes: None,
            test_fraction: 0.2,
            split_seed: 0,
        }
    }
}

impl CsvSchema {
    /// The Credit Approval (`crx.data`) layout; `+` is the positive class.
    pub fn uci_credit() -> Self {
        CsvSchema {
            label_column: 15,
            categorical_columns: vec![0, 3, 4, 5, 6, 8, 9, 11, 12],
            label_classes: Some(vec!["-".into(), "+".into()]),
            ..Default::default()
        }
    }
}

enum Column {
    Numeric(usize),
    Categorical(usize, Vec<String>),
}

/// Loads a CSV file: drops rows containing the missing token, one-hot encodes
/// categorical columns, splits train/test by seed (stratified by class) and
/// z-scores numeric columns with train statistics.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    if !(0.0..1.0).contains(&schema.test_fraction) {
        return Err(Error::config("test_fraction must lie in [0, 1)"));
    }
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .trim(::csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() <= schema.label_column {
            return Err(Error::Parse {
                path: path.into(),
                line,
                message: format!("expected more than {} fields, found {}", schema.label_column, record.len()),
            });
        }
        if record.iter().any(|f| f == schema.missing_token) {
            continue;
        }
        rows.push((line, record.iter().map(str::to_owned).collect()));
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let width = rows[0].1.len();

    let classes: Vec<String> = match &schema.label_classes {
        Some(c) => c.clone(),
        None => rows
            .iter()
            .map(|(_, r)| r[schema.label_column].clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    if classes.len() < 2 {
        return Err(Error::config("need at least two label classes"));
    }

    let mut columns = Vec::new();
    for j in 0..width {
        if j == schema.label_column {
            continue;
        }
        if schema.categorical_columns.contains(&j) {
            let vocab: BTreeSet<String> = rows.iter().map(|(_, r)| r[j].clone()).collect();
            columns.push(Column::Categorical(j, vocab.into_iter().collect()));
        } else {
            columns.push(Column::Numeric(j));
        }
    }
    let dim: usize = columns
        .iter()
        .map(|c| match c {
            Column::Numeric(_) => 1,
            Column::Categorical(_, v) => v.len(),
        })
        .sum();

    let mut x = Array2::zeros((rows.len(), dim));
    let mut labels = Vec::with_capacity(rows.len());
    let mut numeric_cols = Vec::new();
    for (i, (line, row)) in rows.iter().enumerate() {
        let parse_err = |message: String| Error::Parse {
            path: path.into(),
            line: *line,
            message,
        };
        let label = &row[schema.label_column];
        let l = classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| parse_err(format!("unknown label {label:?}")))?;
        labels.push(l);
        let mut out = 0;
        for col in &columns {
            match col {
                Column::Numeric(j) => {
                    let v: f64 = row[*j]
                        .parse()
                        .map_err(|_| parse_err(format!("column {j}: {:?} is not a number", row[*j])))?;
                    if !v.is_finite() {
                        return Err(parse_err(format!("column {j}: non-finite value")));
                    }
                    x[[i, out]] = v;
                    if i == 0 {
                        numeric_cols.push(out);
                    }
                    out += 1;
                }
                Column::Categorical(j, vocab) => {
                    let k = vocab.iter().position(|v| *v == row[*j]).expect("vocabulary built from rows");
                    x[[i, out + k]] = 1.0;
                    out += vocab.len();
                }
            }
        }
    }

    let (train, test) = stratified_indices(&labels, classes.len(), schema.test_fraction, schema.split_seed);
    let mut train_x = x.select(Axis(0), &train);
    let mut test_x = x.select(Axis(0), &test);
    let fitted = FeatureStats::fit(&train_x);
    let mut stats = FeatureStats::identity(dim);
    for &c in &numeric_cols {
        stats.mean[c] = fitted.mean[c];
        stats.std[c] = fitted.std[c];
    }
    stats.apply(&mut train_x);
    stats.apply(&mut test_x);

    let ds = Dataset {
        train_inputs: train_x,
        train_labels: train.iter().map(|&i| labels[i]).collect(),
        test_inputs: test_x,
        test_labels: test.iter().map(|&i| labels[i]).collect(),
        feature_stats: stats,
        class_count: classes.len(),
    };
    ds.validate()?;
    log::debug!(
        "loaded {}: {} rows kept, {} train / {} test, {} features",
        path.display(),
        rows.len(),
        ds.train_len(),
        ds.test_labels.len(),
        dim
    );
    Ok(ds)
}

fn csv_error(path: &Path, e: ::csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        ::csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            path: path.into(),
            line,
            message: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn numeric_columns_are_standardized_on_train() {
        let mut text = String::new();
        for i in 0..20 {
            text.push_str(&format!("{},{},{}\n", i as f64 * 1.5, 100 - i * i, if i % 2 == 0 { "a" } else { "b" }));
        }
        let f = write(&text);
        let schema = CsvSchema {
            label_column: 2,
            test_fraction: 0.0,
            ..Default::default()
        };
        let ds = load_csv(f.path(), &schema).unwrap();
        assert_eq!(ds.train_len(), 20);
        for col in ds.train_inputs.columns() {
            let mean = col.mean().unwrap();
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20.0).sqrt();
            assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn categoricals_are_one_hot_and_missing_rows_dropped() {
        let f = write("x,1.0,+\ny,2.0,-\n?,3.0,+\nx,4.0,-\n");
        let schema = CsvSchema {
            label_column: 2,
            categorical_columns: vec![0],
            label_classes: Some(vec!["-".into(), "+".into()]),
            test_fraction: 0.0,
            ..Default::default()
        };
        let ds = load_csv(f.path(), &schema).unwrap();
        assert_eq!(ds.train_len(), 3);
        assert_eq!(ds.input_dim(), 3);
        assert_eq!(ds.train_labels, vec![1, 0, 0]);
        assert_eq!(ds.train_inputs.row(1).to_vec()[..2], [0.0, 1.0]);
    }

    #[test]
    fn all_missing_is_empty_dataset() {
        let f = write("?,1,a\n2,?,b\n");
        let schema = CsvSchema {
            label_column: 2,
            ..Default::default()
        };
        assert!(matches!(load_csv(f.path(), &schema), Err(Error::EmptyDataset)));
    }

    #[test]
    fn bad_number_reports_line() {
        let f = write("1.0,a\n2.0,b\nzz,a\n");
        let schema = CsvSchema {
            label_column: 1,
            ..Default::default()
        };
        match load_csv(f.path(), &schema) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_row_is_a_parse_error() {
        let f = write("1.0,a\n2.0\n");
        let schema = CsvSchema {
            label_column: 1,
            ..Default::default()
        };
        assert!(matches!(load_csv(f.path(), &schema), Err(Error::Parse { .. })));
    }
}
