use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{format_sig9, DatasetConfig, DatasetError, Segment, SegmentSet};
use crate::numerics::Tensor;

/// Per-channel sinusoid of one regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    /// Hz, one per channel.
    pub frequency: Vec<f64>,
    pub amplitude: Vec<f64>,
    /// Radians.
    pub phase: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub sampling_rate: f64,
    pub window_len: usize,
    pub num_channels: usize,
    pub segments_per_regime: usize,
    pub noise_std: f64,
    /// Each segment starts at a uniform random time offset in `[0, time_jitter)` seconds.
    #[serde(default)]
    pub time_jitter: f64,
    pub regimes: Vec<RegimeSpec>,
}

impl SynthSpec {
    /// `k` regimes with distinct frequencies, amplitudes and phases per
    /// channel; one-second windows.
    pub fn standard(k: usize, d: usize, window_len: usize, segments_per_regime: usize, noise_std: f64) -> Self {
        let regimes = (0..k)
            .map(|r| RegimeSpec {
                frequency: (0..d).map(|c| (1 + r) as f64 + 0.5 * c as f64).collect(),
                amplitude: (0..d).map(|c| 1.0 + 0.5 * ((r + c) % 3) as f64).collect(),
                phase: (0..d)
                    .map(|c| std::f64::consts::TAU * (r * d + c) as f64 / (k * d) as f64)
                    .collect(),
            })
            .collect();
        Self {
            name: "synthetic".into(),
            sampling_rate: window_len as f64,
            window_len,
            num_channels: d,
            segments_per_regime,
            noise_std,
            time_jitter: 0.0,
            regimes,
        }
    }

    pub fn num_regimes(&self) -> usize {
        self.regimes.len()
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        let duration = self.window_len as f64 / self.sampling_rate;
        DatasetConfig {
            name: self.name.clone(),
            sampling_rate: self.sampling_rate,
            window_duration: duration,
            window_step: duration / 2.0,
            num_channels: self.num_channels,
            num_clusters: self.num_regimes(),
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.num_regimes() < 2 {
            return Err(DatasetError::Config(format!("need at least 2 regimes, got {}", self.num_regimes())));
        }
        if self.segments_per_regime == 0 {
            return Err(DatasetError::Config("segments_per_regime must be positive".into()));
        }
        if !(self.noise_std >= 0.0) || !(self.time_jitter >= 0.0) {
            return Err(DatasetError::Config("noise_std and time_jitter must be non-negative".into()));
        }
        for (r, reg) in self.regimes.iter().enumerate() {
            let d = self.num_channels;
            if reg.frequency.len() != d || reg.amplitude.len() != d || reg.phase.len() != d {
                return Err(DatasetError::Config(format!("regime {r} does not define {d} channels")));
            }
        }
        let cfg = self.dataset_config();
        cfg.validate()?;
        if cfg.window_len() != self.window_len {
            return Err(DatasetError::Config("window_len is not representable at this sampling rate".into()));
        }
        Ok(())
    }
}

/// Deterministic labeled sinusoid segments. Segment `i` belongs to regime
/// `i % k`. Values are rounded to the canonical file precision so a
/// write/load round trip is exact.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SegmentSet, DatasetError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let k = spec.num_regimes();
    let (t_len, d) = (spec.window_len, spec.num_channels);
    let total = k * spec.segments_per_regime;
    let mut segments = Vec::with_capacity(total);
    for i in 0..total {
        let r = i % k;
        let reg = &spec.regimes[r];
        let offset = if spec.time_jitter > 0.0 { rng.random_range(0.0..spec.time_jitter) } else { 0.0 };
        let mut values = Vec::with_capacity(t_len * d);
        for t in 0..t_len {
            let time = t as f64 / spec.sampling_rate + offset;
            for c in 0..d {
                let clean = reg.amplitude[c] * (std::f64::consts::TAU * reg.frequency[c] * time + reg.phase[c]).sin();
                let eps = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                let v: f64 = format_sig9(clean + eps).parse().expect("formatted float parses");
                values.push(v);
            }
        }
        segments.push(Segment { values: Tensor::from_parts(vec![t_len, d], values), label: Some(r) });
    }
    SegmentSet::new(spec.dataset_config(), segments)
}
