//! Segment sets: windowing, per-channel normalization, task construction,
//! file formats and a synthetic generator.

mod canonical;
mod synth;
mod ucihar;

pub use canonical::{format_sig9, load_canonical, write_canonical, CanonicalMeta};
pub use synth::{synth_generate, RegimeSpec, SynthSpec};
pub use ucihar::{import_ucihar, UCIHAR_CHANNELS};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Tensor;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset configuration: {0}")]
    Config(String),
    #[error("stream of {len} samples is shorter than one window of {window}")]
    EmptyStream { len: usize, window: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("corrupt data in {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
}

/// Recording geometry of one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    /// Hz.
    pub sampling_rate: f64,
    /// Window duration in seconds.
    pub window_duration: f64,
    /// Seconds between consecutive window starts.
    pub window_step: f64,
    pub num_channels: usize,
    pub num_clusters: usize,
}

impl DatasetConfig {
    /// UCI HAR: 50 Hz, 2.56 s windows with 50% overlap, 9 inertial channels, 6 activities.
    pub fn ucihar() -> Self {
        Self {
            name: "ucihar".into(),
            sampling_rate: 50.0,
            window_duration: 2.56,
            window_step: 1.28,
            num_channels: 9,
            num_clusters: 6,
        }
    }

    /// MHEALTH: 50 Hz, 2.56 s windows, 23 channels, 12 activities.
    pub fn mhealth() -> Self {
        Self {
            name: "mhealth".into(),
            sampling_rate: 50.0,
            window_duration: 2.56,
            window_step: 1.28,
            num_channels: 23,
            num_clusters: 12,
        }
    }

    /// Samples per window.
    pub fn window_len(&self) -> usize {
        (self.window_duration * self.sampling_rate).round() as usize
    }

    /// Samples between window starts.
    pub fn step_len(&self) -> usize {
        (self.window_step * self.sampling_rate).round() as usize
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let t = self.window_len();
        if !(self.sampling_rate > 0.0) || !(self.window_duration > 0.0) {
            return Err(DatasetError::Config("sampling_rate and window_duration must be positive".into()));
        }
        if t < 2 || !t.is_multiple_of(2) {
            return Err(DatasetError::Config(format!(
                "window of {} s at {} Hz is {t} samples; need an even count >= 2",
                self.window_duration, self.sampling_rate
            )));
        }
        if !(self.window_step > 0.0) || self.window_step > self.window_duration || self.step_len() == 0 {
            return Err(DatasetError::Config(format!(
                "window_step {} must lie in (0, window_duration]",
                self.window_step
            )));
        }
        if self.num_channels == 0 || self.num_clusters == 0 {
            return Err(DatasetError::Config("num_channels and num_clusters must be positive".into()));
        }
        Ok(())
    }
}

/// One window: `T x d` values and an optional ground-truth label.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub values: Tensor,
    pub label: Option<usize>,
}

/// Per-channel z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Lower bound on a channel's standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSet {
    pub config: DatasetConfig,
    pub segments: Vec<Segment>,
    pub normalization: Option<NormStats>,
}

impl SegmentSet {
    /// Checks the shape and label invariants.
    pub fn new(config: DatasetConfig, segments: Vec<Segment>) -> Result<Self, DatasetError> {
        let t = config.window_len();
        for (i, s) in segments.iter().enumerate() {
            if s.values.shape() != [t, config.num_channels] {
                return Err(DatasetError::Config(format!(
                    "segment {i} has shape {:?}, expected [{t}, {}]",
                    s.values.shape(),
                    config.num_channels
                )));
            }
            if let Some(l) = s.label {
                if l >= config.num_clusters {
                    return Err(DatasetError::Config(format!(
                        "segment {i} label {l} outside [0, {})",
                        config.num_clusters
                    )));
                }
            }
        }
        Ok(Self { config, segments, normalization: None })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.config.window_len()
    }

    pub fn num_channels(&self) -> usize {
        self.config.num_channels
    }

    /// Ground-truth labels when every segment carries one.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.segments.iter().map(|s| s.label).collect()
    }

    /// Each full window flattened into one row: `n x (T*d)`.
    pub fn flattened(&self) -> Tensor {
        let width = self.window_len() * self.num_channels();
        let mut data = Vec::with_capacity(self.len() * width);
        for s in &self.segments {
            data.extend_from_slice(s.values.data());
        }
        Tensor::from_parts(vec![self.len(), width], data)
    }

    /// The segments at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            config: self.config.clone(),
            segments: idx.iter().map(|&i| self.segments[i].clone()).collect(),
            normalization: self.normalization.clone(),
        }
    }
}

/// Cuts `stream` (`L x d`) into windows starting at 0 with the configured
/// step. With per-sample labels, each window takes the majority label of the
/// samples it covers (ties go to the lowest label).
pub fn sliding_window(
    stream: &Tensor,
    sample_labels: Option<&[usize]>,
    config: &DatasetConfig,
) -> Result<SegmentSet, DatasetError> {
    config.validate()?;
    let (len, d) = stream.dims2();
    if stream.rank() != 2 || d != config.num_channels {
        return Err(DatasetError::Config(format!(
            "stream shape {:?} does not have {} channels",
            stream.shape(),
            config.num_channels
        )));
    }
    if let Some(labels) = sample_labels {
        if labels.len() != len {
            return Err(DatasetError::Config(format!("{} sample labels for {len} samples", labels.len())));
        }
    }
    let t = config.window_len();
    if len < t {
        return Err(DatasetError::EmptyStream { len, window: t });
    }
    let step = config.step_len();
    let mut segments = Vec::with_capacity((len - t) / step + 1);
    let mut start = 0;
    while start + t <= len {
        let values = Tensor::from_parts(vec![t, d], stream.data()[start * d..(start + t) * d].to_vec());
        let label = sample_labels.map(|l| majority_label(&l[start..start + t]));
        segments.push(Segment { values, label });
        start += step;
    }
    SegmentSet::new(config.clone(), segments)
}

fn majority_label(labels: &[usize]) -> usize {
    let max = labels.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; max + 1];
    for &l in labels {
        counts[l] += 1;
    }
    // first maximum = lowest label among ties
    let mut best = 0;
    for (l, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = l;
        }
    }
    best
}

/// Per-channel mean and population standard deviation over every sample of
/// every segment.
pub fn fit_normalization(set: &SegmentSet) -> Result<NormStats, DatasetError> {
    if set.is_empty() {
        return Err(DatasetError::Config("cannot fit normalization on an empty set".into()));
    }
    let d = set.num_channels();
    let mut sum = vec![0.0; d];
    let mut count = 0usize;
    for s in &set.segments {
        for row in s.values.data().chunks_exact(d) {
            for (acc, v) in sum.iter_mut().zip(row) {
                *acc += v;
            }
            count += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; d];
    for s in &set.segments {
        for row in s.values.data().chunks_exact(d) {
            for ((acc, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
    }
    let std = sq.iter().map(|s| (s / count as f64).sqrt().max(STD_FLOOR)).collect();
    Ok(NormStats { mean, std })
}

/// `(value - mean) / std` per channel; the stats are recorded on the result.
pub fn apply_normalization(set: &SegmentSet, stats: &NormStats) -> Result<SegmentSet, DatasetError> {
    let d = set.num_channels();
    if stats.mean.len() != d || stats.std.len() != d {
        return Err(DatasetError::Config(format!(
            "normalization stats have {} channels, set has {d}",
            stats.mean.len()
        )));
    }
    let segments = set
        .segments
        .iter()
        .map(|s| {
            let mut values = s.values.clone();
            for row in values.data_mut().chunks_exact_mut(d) {
                for ((v, m), sd) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
                    *v = (*v - m) / sd;
                }
            }
            Segment { values, label: s.label }
        })
        .collect();
    Ok(SegmentSet { config: set.config.clone(), segments, normalization: Some(stats.clone()) })
}

/// Inverse of [`apply_normalization`].
pub fn denormalize(set: &SegmentSet, stats: &NormStats) -> Result<SegmentSet, DatasetError> {
    let d = set.num_channels();
    if stats.mean.len() != d || stats.std.len() != d {
        return Err(DatasetError::Config("normalization channel mismatch".into()));
    }
    let segments = set
        .segments
        .iter()
        .map(|s| {
            let mut values = s.values.clone();
            for row in values.data_mut().chunks_exact_mut(d) {
                for ((v, m), sd) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
                    *v = *v * sd + m;
                }
            }
            Segment { values, label: s.label }
        })
        .collect();
    Ok(SegmentSet { config: set.config.clone(), segments, normalization: None })
}

/// Encoder input, time-reversed reconstruction target and future target,
/// each `(T/2) x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskTriple {
    pub input: Tensor,
    pub rec_target: Tensor,
    pub fut_target: Tensor,
}

/// Splits every segment at `T/2`: the first half is the input, its time
/// reversal the reconstruction target, the second half the future target.
pub fn build_tasks(set: &SegmentSet) -> Result<Vec<TaskTriple>, DatasetError> {
    let t = set.window_len();
    if t < 2 || !t.is_multiple_of(2) {
        return Err(DatasetError::Config(format!("window length {t} is not even")));
    }
    let half = t / 2;
    let d = set.num_channels();
    Ok(set
        .segments
        .iter()
        .map(|s| {
            let v = s.values.data();
            let input = v[..half * d].to_vec();
            let rec: Vec<f64> = input.chunks_exact(d).rev().flatten().copied().collect();
            TaskTriple {
                input: Tensor::from_parts(vec![half, d], input),
                rec_target: Tensor::from_parts(vec![half, d], rec),
                fut_target: Tensor::from_parts(vec![half, d], v[half * d..].to_vec()),
            }
        })
        .collect())
}
