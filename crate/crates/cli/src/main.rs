//! `seqcluster`: synthetic data, pretraining, refinement, evaluation and
//! embedding export for deep clustering of sensor segments.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{InitChoice, RunConfig};
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "seqcluster", version, about, long_about = None)]
#[command(after_help = "\
Settings come from built-in defaults, then the --config file, then flags.
Exit codes: 0 success, 2 configuration or usage, 3 numeric failure, 4 i/o.

eval_report.csv columns: space,method,split,n,k,acc,nmi,nmi_geometric
(space is raw, embedding or end-to-end; metrics are n/a without labels).")]
struct Cli {
    /// TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). `--threads 1` is the reproducibility reference.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Log progress (-v) or debug detail (-vv).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a labeled synthetic segment set in the canonical format.
    Synth(SynthArgs),
    /// Train the autoencoder; writes pretrain.ckpt and pretrain_history.csv.
    Pretrain {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Cluster-assignment hardening from a pretrained checkpoint; writes
    /// refined.ckpt, assignments.csv and refine_history.csv (suffixed per
    /// init method with --init both).
    Refine {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Pretrained checkpoint [default: <output-dir>/pretrain.ckpt].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        init: Option<InitChoice>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Score baselines and refined models; writes eval_report.csv and eval_report.txt.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Pretrained checkpoint [default: <output-dir>/pretrain.ckpt].
        #[arg(long)]
        pretrained: Option<PathBuf>,
        /// Refined checkpoints [default: every refined*.ckpt in <output-dir>].
        #[arg(long, num_args = 1..)]
        refined: Vec<PathBuf>,
        /// Also print the geometric-mean NMI.
        #[arg(long)]
        geometric: bool,
    },
    /// Write one embedding row per segment: segment_id, z_0.., label.
    ExportEmbeddings {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Checkpoint to encode with [default: <output-dir>/pretrain.ckpt].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "train", value_parser = ["train", "test"])]
        split: String,
        /// Output file [default: <output-dir>/embeddings_<split>.csv].
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    regimes: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    window_len: Option<usize>,
    #[arg(long)]
    segments_per_regime: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    /// Uniform random start offset per segment, in seconds.
    #[arg(long)]
    time_jitter: Option<f64>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Canonical segment directory of the training split.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Canonical segment directory of the test split.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Extracted UCI HAR archive.
    #[arg(long)]
    ucihar: Option<PathBuf>,
    /// Use a seeded random subset of this many training segments.
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long)]
    num_clusters: Option<usize>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

impl DataArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set_opt(&mut cfg.dataset.train, self.train);
        set_opt(&mut cfg.dataset.test, self.test);
        set_opt(&mut cfg.dataset.ucihar, self.ucihar);
        set_opt(&mut cfg.dataset.subsample, self.subsample);
        set_opt(&mut cfg.dataset.num_clusters, self.num_clusters);
    }
}

impl ModelArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.model.hidden, self.hidden);
        set(&mut cfg.model.layers, self.layers);
        set_opt(&mut cfg.model.embedding_dim, self.embedding_dim);
    }
}

impl TrainArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.train.epochs, self.epochs);
        set(&mut cfg.train.batch_size, self.batch_size);
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.threads, cli.threads);
    set(&mut cfg.output_dir, cli.output_dir);

    let out = cfg.output_dir.clone();
    let default_ckpt = |p: Option<PathBuf>| p.unwrap_or_else(|| out.join("pretrain.ckpt"));
    let action = match cli.command {
        Command::Synth(a) => {
            let s = &mut cfg.synth;
            set(&mut s.regimes, a.regimes);
            set(&mut s.channels, a.channels);
            set(&mut s.window_len, a.window_len);
            set(&mut s.segments_per_regime, a.segments_per_regime);
            set(&mut s.noise_std, a.noise_std);
            set(&mut s.time_jitter, a.time_jitter);
            commands::Action::Synth
        }
        Command::Pretrain { data, model, train } => {
            data.apply(&mut cfg);
            model.apply(&mut cfg);
            train.apply(&mut cfg);
            commands::Action::Pretrain
        }
        Command::Refine { data, model, train, checkpoint, init, gamma, max_epochs } => {
            data.apply(&mut cfg);
            model.apply(&mut cfg);
            train.apply(&mut cfg);
            set(&mut cfg.refine.init, init);
            set(&mut cfg.refine.gamma, gamma);
            set(&mut cfg.refine.max_epochs, max_epochs);
            commands::Action::Refine { checkpoint: default_ckpt(checkpoint) }
        }
        Command::Evaluate { data, model, pretrained, refined, geometric } => {
            data.apply(&mut cfg);
            model.apply(&mut cfg);
            cfg.eval.nmi_geometric |= geometric;
            commands::Action::Evaluate { pretrained: default_ckpt(pretrained), refined }
        }
        Command::ExportEmbeddings { data, model, checkpoint, split, out: file } => {
            data.apply(&mut cfg);
            model.apply(&mut cfg);
            let file = file.unwrap_or_else(|| out.join(format!("embeddings_{split}.csv")));
            commands::Action::Export { checkpoint: default_ckpt(checkpoint), split, out: file }
        }
    };
    cfg.validate()?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    commands::execute(&cfg, action)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("seqcluster: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
