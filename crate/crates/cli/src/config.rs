//! Run configuration: built-in defaults, then the TOML file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use seqcluster::cah::{InitMethod, RefineConfig};
use seqcluster::datasets::SynthSpec;
use seqcluster::evaluation::BaselineMethod;
use seqcluster::model::{default_embedding_dim, ModelConfig, TrainConfig};
use seqcluster::numerics::{AdamConfig, LrSchedule};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for data-parallel encoding; 0 uses every core.
    pub threads: usize,
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub refine: RefineSection,
    pub eval: EvalSection,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            output_dir: PathBuf::from("seqcluster-out"),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            refine: RefineSection::default(),
            eval: EvalSection::default(),
            synth: SynthSection::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Canonical segment directory of the training split.
    pub train: Option<PathBuf>,
    /// Canonical segment directory of the test split.
    pub test: Option<PathBuf>,
    /// Extracted UCI HAR archive; replaces `train` and `test`.
    pub ucihar: Option<PathBuf>,
    /// Seeded random subset of the training split.
    pub subsample: Option<usize>,
    /// Overrides the cluster count stored with the data.
    pub num_clusters: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
    pub layers: usize,
    /// Defaults to 64 below 16 channels and 256 otherwise.
    pub embedding_dim: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden: 256, layers: 2, embedding_dim: None }
    }
}

impl ModelSection {
    pub fn model_config(&self, channels: usize) -> ModelConfig {
        ModelConfig {
            input_dim: channels,
            hidden: self.hidden,
            layers: self.layers,
            embedding_dim: self.embedding_dim.unwrap_or_else(|| default_embedding_dim(channels)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epoch (0-based, per stage) from which the rate is divided by `decay_factor`.
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.adam.schedule.initial,
            decay_epoch: t.adam.schedule.decay_epoch,
            decay_factor: t.adam.schedule.decay_factor,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                schedule: LrSchedule {
                    initial: self.learning_rate,
                    decay_factor: self.decay_factor,
                    decay_epoch: self.decay_epoch,
                },
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InitChoice {
    Kmeans,
    Ward,
    Both,
}

impl InitChoice {
    pub fn methods(self) -> Vec<InitMethod> {
        match self {
            InitChoice::Kmeans => vec![InitMethod::Kmeans],
            InitChoice::Ward => vec![InitMethod::Ward],
            InitChoice::Both => vec![InitMethod::Kmeans, InitMethod::Ward],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSection {
    pub gamma: f64,
    pub stop_threshold: f64,
    pub max_epochs: usize,
    pub init: InitChoice,
}

impl Default for RefineSection {
    fn default() -> Self {
        let r = RefineConfig::default();
        Self { gamma: r.gamma, stop_threshold: r.stop_threshold, max_epochs: r.max_epochs, init: InitChoice::Ward }
    }
}

impl RefineSection {
    pub fn refine_config(&self, init_method: InitMethod) -> RefineConfig {
        RefineConfig { gamma: self.gamma, stop_threshold: self.stop_threshold, max_epochs: self.max_epochs, init_method }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub splits: Vec<String>,
    pub baselines: Vec<BaselineMethod>,
    pub raw: bool,
    pub embedding: bool,
    pub end_to_end: bool,
    /// Adds the geometric-mean NMI column to the printed table.
    pub nmi_geometric: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            splits: vec!["train".into(), "test".into()],
            baselines: BaselineMethod::ALL.to_vec(),
            raw: true,
            embedding: true,
            end_to_end: true,
            nmi_geometric: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub regimes: usize,
    pub channels: usize,
    pub window_len: usize,
    pub segments_per_regime: usize,
    pub noise_std: f64,
    pub time_jitter: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { regimes: 3, channels: 4, window_len: 32, segments_per_regime: 100, noise_std: 0.05, time_jitter: 0.0 }
    }
}

impl SynthSection {
    pub fn spec(&self) -> SynthSpec {
        let mut spec = SynthSpec::standard(self.regimes, self.channels, self.window_len, self.segments_per_regime, self.noise_std);
        spec.time_jitter = self.time_jitter;
        spec
    }
}

impl RunConfig {
    /// Reads `path`, resolving relative dataset paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let parse_err = |e: toml::de::Error| CliError::Config(format!("{}: {e}", path.display()));
        let table: toml::Table = text.parse().map_err(parse_err)?;
        let sets_output = table.contains_key("output_dir");
        let mut cfg: RunConfig = table.try_into().map_err(parse_err)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset.train, &mut cfg.dataset.test, &mut cfg.dataset.ucihar].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if sets_output && cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, why: &str| Err(CliError::Config(format!("{field}: {why}")));
        if self.train.epochs == 0 {
            return bad("train.epochs", "must be positive");
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size", "must be positive");
        }
        if !(self.train.learning_rate >= 0.0) || !(self.train.decay_factor > 0.0) {
            return bad("train.learning_rate", "rate must be non-negative and decay_factor positive");
        }
        if self.model.hidden == 0 || self.model.layers == 0 || self.model.embedding_dim == Some(0) {
            return bad("model", "hidden, layers and embedding_dim must be positive");
        }
        if self.dataset.subsample == Some(0) {
            return bad("dataset.subsample", "must be positive");
        }
        if self.dataset.num_clusters.is_some_and(|k| k < 2) {
            return bad("dataset.num_clusters", "need at least 2 clusters");
        }
        if self.dataset.ucihar.is_some() && (self.dataset.train.is_some() || self.dataset.test.is_some()) {
            return bad("dataset.ucihar", "cannot be combined with dataset.train or dataset.test");
        }
        for s in &self.eval.splits {
            if s != "train" && s != "test" {
                return bad("eval.splits", &format!("unknown split {s:?}"));
            }
        }
        self.refine_check()
    }

    fn refine_check(&self) -> Result<(), CliError> {
        self.refine
            .refine_config(InitMethod::Ward)
            .validate()
            .map_err(|e| CliError::Config(format!("refine: {e}")))
    }

    /// TOML text that replays this run.
    pub fn echo(&self, command: &str) -> String {
        let body = toml::to_string(self).expect("config serializes");
        format!("# resolved configuration of `seqcluster {command}`\n{body}")
    }
}
