//! Dataset ingestion for the logistic-regression targets.
//!
//! Files are delimiter-separated numeric tables whose last column is a
//! binary label; a header row is auto-detected. Features are standardized
//! with statistics computed on the training split only, and the 60/20/20
//! split is a deterministic shuffle keyed by the split seed.

use super::TargetError;
use crate::core::{stream_label, RngStream};
use rand::Rng;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.first().map_or(0, |r| r.len())
    }
}

#[derive(Debug, Clone)]
pub struct DataSplits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub warnings: Vec<String>,
}

fn detect_delimiter(line: &str) -> char {
    for d in [',', ';', '\t'] {
        if line.contains(d) {
            return d;
        }
    }
    ' '
}

fn split_fields(line: &str, delim: char) -> Vec<&str> {
    if delim == ' ' {
        line.split_whitespace().collect()
    } else {
        line.split(delim).map(str::trim).collect()
    }
}

/// Load, shuffle, split 60/20/20 and standardize a numeric table.
pub fn load_dataset(path: impl AsRef<Path>, split_seed: u64) -> Result<DataSplits, TargetError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut delim = None;
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let d = *delim.get_or_insert_with(|| detect_delimiter(trimmed));
        let fields = split_fields(trimmed, d);
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(row) => {
                if let Some(first) = rows.first() {
                    if row.len() != first.len() {
                        return Err(TargetError::Parse {
                            line: lineno + 1,
                            message: format!(
                                "expected {} columns, found {}",
                                first.len(),
                                row.len()
                            ),
                        });
                    }
                }
                rows.push(row);
            }
            Err(e) => {
                // a non-numeric first line is a header; anywhere else it is data corruption
                if rows.is_empty() && lineno == 0 {
                    continue;
                }
                return Err(TargetError::Parse {
                    line: lineno + 1,
                    message: format!("non-numeric cell: {e}"),
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(TargetError::Parse {
            line: 0,
            message: "no data rows".into(),
        });
    }
    if rows[0].len() < 2 {
        return Err(TargetError::Parse {
            line: 1,
            message: "need at least one feature column and a label column".into(),
        });
    }
    for (i, row) in rows.iter().enumerate() {
        let label = *row.last().unwrap();
        if label != 0.0 && label != 1.0 {
            return Err(TargetError::Parse {
                line: i + 1,
                message: format!("label column must be 0/1, found {label}"),
            });
        }
    }

    // deterministic Fisher-Yates shuffle
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut rng = RngStream::new(split_seed).child(stream_label::DATA_SPLIT).rng();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }

    let n = rows.len();
    let n_train = (n as f64 * 0.6).floor() as usize;
    let n_val = (n as f64 * 0.2).floor() as usize;
    let take = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut feats = Vec::with_capacity(idx.len());
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            let row = &rows[i];
            feats.push(row[..row.len() - 1].to_vec());
            labels.push(*row.last().unwrap());
        }
        (feats, labels)
    };
    let (mut train_x, train_y) = take(&order[..n_train]);
    let (mut val_x, val_y) = take(&order[n_train..n_train + n_val]);
    let (mut test_x, test_y) = take(&order[n_train + n_val..]);

    // standardization statistics from the training split only
    let d = train_x.first().map_or(0, |r| r.len());
    let mut warnings = Vec::new();
    let m = train_x.len().max(1) as f64;
    for col in 0..d {
        let mean: f64 = train_x.iter().map(|r| r[col]).sum::<f64>() / m;
        let var: f64 = train_x.iter().map(|r| (r[col] - mean) * (r[col] - mean)).sum::<f64>() / m;
        if var < 1e-12 {
            warnings.push(format!(
                "feature column {col} is constant on the training split; standardization skipped"
            ));
            continue;
        }
        let sd = var.sqrt();
        for set in [&mut train_x, &mut val_x, &mut test_x] {
            for row in set.iter_mut() {
                row[col] = (row[col] - mean) / sd;
            }
        }
    }

    Ok(DataSplits {
        train: Dataset { features: train_x, labels: train_y },
        validation: Dataset { features: val_x, labels: val_y },
        test: Dataset { features: test_x, labels: test_y },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(name: &str, contents: &str) -> std::path::PathBuf {
        let path = std::env::temp_dir().join(format!("rdsmc_dataset_{name}_{}", std::process::id()));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn toy_csv() -> String {
        let mut s = String::from("f1,f2,label\n");
        for i in 0..10 {
            s.push_str(&format!("{}.5,{},{}\n", i, 2 * i, i % 2));
        }
        s
    }

    #[test]
    fn split_sizes_and_determinism() {
        let path = write_temp("sizes", &toy_csv());
        let a = load_dataset(&path, 9).unwrap();
        assert_eq!(a.train.len(), 6);
        assert_eq!(a.validation.len(), 2);
        assert_eq!(a.test.len(), 2);
        let b = load_dataset(&path, 9).unwrap();
        assert_eq!(a.train.features, b.train.features);
        assert_eq!(a.test.labels, b.test.labels);
        let c = load_dataset(&path, 10).unwrap();
        assert_ne!(a.train.features, c.train.features);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn training_columns_are_standardized() {
        let path = write_temp("std", &toy_csv());
        let s = load_dataset(&path, 3).unwrap();
        for col in 0..2 {
            let mean: f64 =
                s.train.features.iter().map(|r| r[col]).sum::<f64>() / s.train.len() as f64;
            let var: f64 = s.train.features.iter().map(|r| (r[col] - mean).powi(2)).sum::<f64>()
                / s.train.len() as f64;
            assert!(mean.abs() < 1e-10, "col {col} mean {mean}");
            assert!((var - 1.0).abs() < 1e-10, "col {col} var {var}");
        }
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn constant_column_warns_and_is_skipped() {
        let mut s = String::new();
        for i in 0..10 {
            s.push_str(&format!("7.0 {} {}\n", i, i % 2));
        }
        let path = write_temp("const", &s);
        let splits = load_dataset(&path, 0).unwrap();
        assert_eq!(splits.warnings.len(), 1);
        assert!(splits.train.features.iter().all(|r| r[0] == 7.0));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let path = write_temp("badcell", "1.0,2.0,0\n1.0,x,1\n");
        assert!(matches!(
            load_dataset(&path, 0),
            Err(TargetError::Parse { line: 2, .. })
        ));
        std::fs::remove_file(path).ok();

        let path = write_temp("badlabel", "1.0,2.0,0\n1.0,2.0,3\n");
        assert!(load_dataset(&path, 0).is_err());
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn header_is_auto_detected() {
        let with_header = write_temp("hdr", &toy_csv());
        let without: String = toy_csv().lines().skip(1).collect::<Vec<_>>().join("\n");
        let without_header = write_temp("nohdr", &without);
        let a = load_dataset(&with_header, 5).unwrap();
        let b = load_dataset(&without_header, 5).unwrap();
        assert_eq!(a.train.features, b.train.features);
        std::fs::remove_file(with_header).ok();
        std::fs::remove_file(without_header).ok();
    }
}
