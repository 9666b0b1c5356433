//! Importer for the UCI HAR raw inertial signals.
//!
//! Expects the extracted archive root (`UCI HAR Dataset/`, or its parent)
//! with `{train,test}/Inertial Signals/<channel>_{split}.txt` files of
//! 128-sample rows and `{train,test}/y_{split}.txt` activity ids 1..=6.

use std::fs;
use std::path::{Path, PathBuf};

use super::{DatasetConfig, DatasetError, Segment, SegmentSet};
use crate::numerics::Tensor;

/// Channel order of imported segments.
pub const UCIHAR_CHANNELS: [&str; 9] = [
    "body_acc_x",
    "body_acc_y",
    "body_acc_z",
    "body_gyro_x",
    "body_gyro_y",
    "body_gyro_z",
    "total_acc_x",
    "total_acc_y",
    "total_acc_z",
];

pub fn import_ucihar(dir: &Path) -> Result<(SegmentSet, SegmentSet), DatasetError> {
    let root = if dir.join("train").is_dir() { dir.to_path_buf() } else { dir.join("UCI HAR Dataset") };
    Ok((load_split(&root, "train")?, load_split(&root, "test")?))
}

fn read(path: &Path) -> Result<String, DatasetError> {
    if !path.is_file() {
        return Err(DatasetError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

fn parse_rows(path: &Path, width: usize) -> Result<Vec<Vec<f64>>, DatasetError> {
    let text = read(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|f| f.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| DatasetError::Corrupt { path: path.to_path_buf(), detail: format!("row {}: {e}", i + 1) })?;
            if row.len() != width || row.iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::Corrupt {
                    path: path.to_path_buf(),
                    detail: format!("row {} has {} values, expected {width}", i + 1, row.len()),
                });
            }
            Ok(row)
        })
        .collect()
}

fn load_split(root: &Path, split: &str) -> Result<SegmentSet, DatasetError> {
    let config = DatasetConfig::ucihar();
    let t = config.window_len();
    let signals = root.join(split).join("Inertial Signals");
    let channels: Vec<(PathBuf, Vec<Vec<f64>>)> = UCIHAR_CHANNELS
        .iter()
        .map(|name| {
            let p = signals.join(format!("{name}_{split}.txt"));
            let rows = parse_rows(&p, t)?;
            Ok((p, rows))
        })
        .collect::<Result<_, DatasetError>>()?;
    let label_path = root.join(split).join(format!("y_{split}.txt"));
    let labels = parse_rows(&label_path, 1)?;

    let n = channels[0].1.len();
    for (p, rows) in &channels {
        if rows.len() != n {
            return Err(DatasetError::Corrupt {
                path: p.clone(),
                detail: format!("{} rows, {} has {n}", rows.len(), channels[0].0.display()),
            });
        }
    }
    if labels.len() != n {
        return Err(DatasetError::Corrupt {
            path: label_path,
            detail: format!("{} labels for {n} segments", labels.len()),
        });
    }

    let d = UCIHAR_CHANNELS.len();
    let mut segments = Vec::with_capacity(n);
    for (i, label_row) in labels.iter().enumerate() {
        let raw = label_row[0];
        if raw.fract() != 0.0 || !(1.0..=6.0).contains(&raw) {
            return Err(DatasetError::Corrupt {
                path: label_path.clone(),
                detail: format!("row {}: activity id {raw} outside 1..=6", i + 1),
            });
        }
        let mut values = Vec::with_capacity(t * d);
        for step in 0..t {
            for (_, rows) in &channels {
                values.push(rows[i][step]);
            }
        }
        segments.push(Segment { values: Tensor::from_parts(vec![t, d], values), label: Some(raw as usize - 1) });
    }
    SegmentSet::new(config, segments)
}
