//! Canonical segment directory: `meta.json` plus `segments.csv`.
//!
//! `segments.csv` has the header `segment_id,t,ch_0,...,ch_{d-1},label`, one
//! row per time step sorted by `(segment_id, t)`, label `-1` when unknown.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetConfig, DatasetError, Segment, SegmentSet};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalMeta {
    pub name: String,
    pub sampling_rate: f64,
    pub window_duration: f64,
    pub num_channels: usize,
    pub num_clusters: usize,
    pub num_segments: usize,
    pub window_len: usize,
}

/// Decimal rendering with at most 9 significant digits, no exponent.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (8 - exp).max(0) as usize;
    let mut s = format!("{v:.decimals$}");
    // rounding can carry into a new leading digit, e.g. 9.9999999996 -> 10.00000000
    let digits = s.chars().filter(char::is_ascii_digit).skip_while(|&c| c == '0').count();
    if digits > 9 && decimals > 0 {
        s = format!("{v:.prec$}", prec = decimals - 1);
    }
    if s.contains('.') {
        s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

/// Writes `set` into `dir`, creating it if needed.
pub fn write_canonical(dir: &Path, set: &SegmentSet) -> Result<(), DatasetError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let c = &set.config;
    let meta = CanonicalMeta {
        name: c.name.clone(),
        sampling_rate: c.sampling_rate,
        window_duration: c.window_duration,
        num_channels: c.num_channels,
        num_clusters: c.num_clusters,
        num_segments: set.len(),
        window_len: c.window_len(),
    };
    let mut json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    json.push('\n');
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, json).map_err(io(&meta_path))?;

    let d = c.num_channels;
    let mut out = String::from("segment_id,t");
    for ch in 0..d {
        let _ = write!(out, ",ch_{ch}");
    }
    out.push_str(",label\n");
    for (id, s) in set.segments.iter().enumerate() {
        let label = s.label.map_or(-1, |l| l as i64);
        for (t, row) in s.values.data().chunks_exact(d).enumerate() {
            let _ = write!(out, "{id},{t}");
            for v in row {
                out.push(',');
                out.push_str(&format_sig9(*v));
            }
            let _ = writeln!(out, ",{label}");
        }
    }
    let csv_path = dir.join("segments.csv");
    fs::write(&csv_path, out).map_err(io(&csv_path))
}

/// Reads a canonical directory. The window step is not part of the format and
/// defaults to half a window.
pub fn load_canonical(dir: &Path) -> Result<SegmentSet, DatasetError> {
    let meta_path = dir.join("meta.json");
    let csv_path = dir.join("segments.csv");
    for p in [&meta_path, &csv_path] {
        if !p.is_file() {
            return Err(DatasetError::MissingFile(p.clone()));
        }
    }
    let meta_text = fs::read_to_string(&meta_path).map_err(|source| DatasetError::Io { path: meta_path.clone(), source })?;
    let meta: CanonicalMeta = serde_json::from_str(&meta_text)
        .map_err(|e| DatasetError::Corrupt { path: meta_path.clone(), detail: e.to_string() })?;
    let config = DatasetConfig {
        name: meta.name.clone(),
        sampling_rate: meta.sampling_rate,
        window_duration: meta.window_duration,
        window_step: meta.window_duration / 2.0,
        num_channels: meta.num_channels,
        num_clusters: meta.num_clusters,
    };
    config.validate()?;
    let corrupt = |detail: String| DatasetError::Corrupt { path: csv_path.clone(), detail };
    if config.window_len() != meta.window_len {
        return Err(corrupt(format!(
            "window_len {} disagrees with {} s at {} Hz",
            meta.window_len, meta.window_duration, meta.sampling_rate
        )));
    }

    let text = fs::read_to_string(&csv_path).map_err(|source| DatasetError::Io { path: csv_path.clone(), source })?;
    let mut lines = text.lines();
    let d = meta.num_channels;
    let t_len = meta.window_len;
    let mut expected_header = String::from("segment_id,t");
    for ch in 0..d {
        let _ = write!(expected_header, ",ch_{ch}");
    }
    expected_header.push_str(",label");
    match lines.next() {
        Some(h) if h == expected_header => {}
        other => return Err(corrupt(format!("unexpected header {other:?}"))),
    }

    let mut segments = Vec::with_capacity(meta.num_segments);
    let mut values = Vec::with_capacity(t_len * d);
    let mut label: Option<i64> = None;
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 3 {
            return Err(corrupt(format!("line {}: {} fields, expected {}", lineno + 2, fields.len(), d + 3)));
        }
        let parse_int = |s: &str| s.parse::<i64>().map_err(|e| corrupt(format!("line {}: {e}", lineno + 2)));
        let seg = parse_int(fields[0])?;
        let t = parse_int(fields[1])?;
        let row_label = parse_int(fields[d + 2])?;
        if seg != segments.len() as i64 || t != (values.len() / d) as i64 {
            return Err(corrupt(format!("line {}: rows out of (segment_id, t) order", lineno + 2)));
        }
        if t > 0 && label != Some(row_label) {
            return Err(corrupt(format!("line {}: label changes within segment {seg}", lineno + 2)));
        }
        label = Some(row_label);
        for f in &fields[2..d + 2] {
            let v: f64 = f.parse().map_err(|e| corrupt(format!("line {}: {e}", lineno + 2)))?;
            if !v.is_finite() {
                return Err(corrupt(format!("line {}: non-finite value", lineno + 2)));
            }
            values.push(v);
        }
        if values.len() == t_len * d {
            let label = match row_label {
                -1 => None,
                l if l >= 0 && (l as usize) < meta.num_clusters => Some(l as usize),
                l => return Err(corrupt(format!("segment {seg}: label {l} outside [0, {})", meta.num_clusters))),
            };
            let v = std::mem::replace(&mut values, Vec::with_capacity(t_len * d));
            segments.push(Segment { values: Tensor::from_parts(vec![t_len, d], v), label });
        }
    }
    if !values.is_empty() {
        return Err(corrupt("trailing partial segment".into()));
    }
    if segments.len() != meta.num_segments {
        return Err(corrupt(format!("{} segments, meta.json says {}", segments.len(), meta.num_segments)));
    }
    SegmentSet::new(config, segments)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(-0.0), "0");
        assert_eq!(format_sig9(1.5), "1.5");
        assert_eq!(format_sig9(-2.0), "-2");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(123456.789123), "123456.789");
        assert_eq!(format_sig9(9.9999999996), "10");
        assert_eq!(format_sig9(1234567890123.0), "1234567890123");
        assert_eq!(format_sig9(0.000123456789123), "0.000123456789");
    }

    #[test]
    fn round_trip_through_files() {
        let config = DatasetConfig {
            name: "toy".into(),
            sampling_rate: 2.0,
            window_duration: 2.0,
            window_step: 1.0,
            num_channels: 2,
            num_clusters: 2,
        };
        let seg = |v: Vec<f64>, label| Segment { values: Tensor::matrix(4, 2, v).unwrap(), label };
        let set = SegmentSet::new(
            config,
            vec![seg(vec![0.5, -1.25, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], Some(1)), seg(vec![0.0; 8], None)],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_canonical(dir.path(), &set).unwrap();
        let back = load_canonical(dir.path()).unwrap();
        assert_eq!(back, set);
        let csv = fs::read_to_string(dir.path().join("segments.csv")).unwrap();
        assert!(csv.starts_with("segment_id,t,ch_0,ch_1,label\n0,0,0.5,-1.25,1\n"));
        assert!(csv.ends_with("1,3,0,0,-1\n"));
    }

    #[test]
    fn missing_files_are_named() {
        let dir = tempfile::tempdir().unwrap();
        match load_canonical(dir.path()) {
            Err(DatasetError::MissingFile(p)) => assert!(p.ends_with("meta.json")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
