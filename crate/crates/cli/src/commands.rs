use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use seqcluster::cah::{assign_tasks, embed_tasks, init_centroids, refine, InitMethod, RefineEpoch};
use seqcluster::checkpoint::Checkpoint;
use seqcluster::datasets::{
    apply_normalization, build_tasks, fit_normalization, import_ucihar, load_canonical, synth_generate, write_canonical,
    NormStats, SegmentSet,
};
use seqcluster::evaluation::baseline_reports;
use seqcluster::metrics::{format_table, EvalReport};
use seqcluster::model::{pretrain, ModelParams, PretrainEpoch};

use crate::config::{InitChoice, RunConfig};
use crate::error::CliError;

pub enum Action {
    Synth,
    Pretrain,
    Refine { checkpoint: PathBuf },
    Evaluate { pretrained: PathBuf, refined: Vec<PathBuf> },
    Export { checkpoint: PathBuf, split: String, out: PathBuf },
}

// Offsets deriving independent random streams from the run seed.
const PRETRAIN_BATCHES: u64 = 1;
const CENTROID_INIT: u64 = 2;
const REFINE_BATCHES: u64 = 3;
const SUBSAMPLE: u64 = 4;

pub fn execute(cfg: &RunConfig, action: Action) -> Result<(), CliError> {
    match action {
        Action::Synth => synth(cfg),
        Action::Pretrain => cmd_pretrain(cfg),
        Action::Refine { checkpoint } => cmd_refine(cfg, &checkpoint),
        Action::Evaluate { pretrained, refined } => cmd_evaluate(cfg, &pretrained, refined),
        Action::Export { checkpoint, split, out } => cmd_export(cfg, &checkpoint, &split, &out),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn prepare_output(cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let echo = dir.join(format!("{command}.config.toml"));
    fs::write(&echo, cfg.echo(command)).map_err(io_err(&echo))
}

/// Line-buffered CSV file flushed after every row, so a failed run leaves
/// the rows written so far.
struct CsvOut {
    path: PathBuf,
    w: BufWriter<File>,
}

impl CsvOut {
    fn create(path: PathBuf, header: &str) -> Result<Self, CliError> {
        let f = File::create(&path).map_err(io_err(&path))?;
        let mut out = Self { path, w: BufWriter::new(f) };
        out.row(header)?;
        Ok(out)
    }

    fn row(&mut self, line: &str) -> Result<(), CliError> {
        writeln!(self.w, "{line}").and_then(|_| self.w.flush()).map_err(io_err(&self.path))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let set = synth_generate(&cfg.synth.spec(), cfg.seed)?;
    prepare_output(cfg, "synth")?;
    write_canonical(&cfg.output_dir, &set)?;
    log::info!("wrote {} segments to {}", set.len(), cfg.output_dir.display());
    Ok(())
}

struct Splits {
    train: SegmentSet,
    test: Option<SegmentSet>,
}

fn load_splits(cfg: &RunConfig) -> Result<Splits, CliError> {
    let ds = &cfg.dataset;
    let (mut train, mut test) = match (&ds.ucihar, &ds.train) {
        (Some(dir), _) => {
            let (train, test) = import_ucihar(dir)?;
            (train, Some(test))
        }
        (None, Some(dir)) => (load_canonical(dir)?, ds.test.as_deref().map(load_canonical).transpose()?),
        (None, None) => {
            return Err(CliError::Config("dataset.train is not set (give --train <dir> or --ucihar <dir>)".into()))
        }
    };
    if let Some(k) = ds.num_clusters {
        for set in std::iter::once(&mut train).chain(test.as_mut()) {
            set.config.num_clusters = k;
            *set = SegmentSet::new(set.config.clone(), std::mem::take(&mut set.segments))?;
        }
    }
    if let Some(n) = ds.subsample {
        train = subsample(&train, n, cfg.seed.wrapping_add(SUBSAMPLE));
    }
    if train.is_empty() {
        return Err(CliError::Config("dataset.train holds no segments".into()));
    }
    if test.as_ref().is_some_and(|t| t.config.num_channels != train.config.num_channels) {
        return Err(CliError::Config("dataset.test has a different channel count than dataset.train".into()));
    }
    Ok(Splits { train, test })
}

/// Seeded draw without replacement, kept in original order.
fn subsample(set: &SegmentSet, n: usize, seed: u64) -> SegmentSet {
    use rand::seq::index::sample;
    use rand::SeedableRng;
    if n >= set.len() {
        return set.clone();
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, set.len(), n).into_vec();
    idx.sort_unstable();
    set.subset(&idx)
}

fn load_checkpoint(cfg: &RunConfig, path: &Path, channels: usize) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::Config(format!("checkpoint {} does not exist", path.display())));
    }
    let ck = Checkpoint::load(path)?;
    let want = cfg.model.model_config(channels);
    let have = ck.model.config();
    if have.input_dim != want.input_dim || have.embedding_dim != want.embedding_dim {
        return Err(CliError::Config(format!(
            "{} was trained for d = {}, z = {}; the data and configuration give d = {}, z = {}",
            path.display(),
            have.input_dim,
            have.embedding_dim,
            want.input_dim,
            want.embedding_dim
        )));
    }
    Ok(ck)
}

fn normalization_of(ck: &Checkpoint, path: &Path) -> Result<NormStats, CliError> {
    ck.normalization
        .clone()
        .ok_or_else(|| CliError::Config(format!("{} carries no normalization statistics", path.display())))
}

fn pretrain_row(e: &PretrainEpoch) -> String {
    format!("{},{},{},{},{}", e.epoch, e.loss, e.rec_loss, e.fut_loss, e.learning_rate)
}

fn cmd_pretrain(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_splits(cfg)?;
    let stats = fit_normalization(&data.train)?;
    let train = apply_normalization(&data.train, &stats)?;
    let tasks = build_tasks(&train)?;
    let model_cfg = cfg.model.model_config(train.num_channels());
    let init = ModelParams::init(model_cfg, cfg.seed)?;
    log::info!("{} segments, {} parameters", tasks.len(), init.num_parameters());

    prepare_output(cfg, "pretrain")?;
    let mut history = CsvOut::create(cfg.output_dir.join("pretrain_history.csv"), "epoch,loss,rec_loss,fut_loss,learning_rate")?;
    let mut write_failure = None;
    let result = pretrain(&tasks, init, &cfg.train.train_config(), cfg.seed.wrapping_add(PRETRAIN_BATCHES), |e| {
        if write_failure.is_none() {
            write_failure = history.row(&pretrain_row(e)).err();
        }
    });
    if let Some(e) = write_failure {
        return Err(e);
    }
    let (model, epochs) = result?;
    let ck = Checkpoint {
        stage: "pretrain".into(),
        seed: cfg.seed,
        model,
        normalization: Some(stats),
        init_method: None,
        centroids: None,
        config_echo: cfg.echo("pretrain"),
    };
    ck.save(&cfg.output_dir.join("pretrain.ckpt"))?;
    if let (Some(first), Some(last)) = (epochs.first(), epochs.last()) {
        println!("pretrain: {} epochs, loss {:.6} -> {:.6}", epochs.len(), first.loss, last.loss);
    }
    Ok(())
}

fn refine_row(method: InitMethod, e: &RefineEpoch, labeled: bool) -> String {
    let mut row = format!(
        "{},{},{},{},{},{}",
        method.name(),
        e.epoch,
        e.loss,
        e.cluster_loss,
        e.ae_loss,
        e.assignment_change
    );
    if labeled {
        let _ = write!(row, ",{},{}", e.acc.unwrap_or(f64::NAN), e.nmi.unwrap_or(f64::NAN));
    }
    row
}

fn cmd_refine(cfg: &RunConfig, ckpt_path: &Path) -> Result<(), CliError> {
    let data = load_splits(cfg)?;
    let ck = load_checkpoint(cfg, ckpt_path, data.train.num_channels())?;
    if ck.stage != "pretrain" {
        log::warn!("{} is a {} checkpoint; refining it again", ckpt_path.display(), ck.stage);
    }
    let train = apply_normalization(&data.train, &normalization_of(&ck, ckpt_path)?)?;
    let tasks = build_tasks(&train)?;
    let labels = train.labels();
    let k = train.config.num_clusters;
    let z = embed_tasks(&tasks, &ck.model)?;

    prepare_output(cfg, "refine")?;
    let mut header = "init_method,epoch,L_total,L_C,L_AE,assignment_change_fraction".to_string();
    if labels.is_some() {
        header.push_str(",train_ACC,train_NMI");
    }
    for method in cfg.refine.init.methods() {
        let suffix = if cfg.refine.init == InitChoice::Both { format!("_{}", method.name()) } else { String::new() };
        let centroids = init_centroids(&z, method, k, cfg.seed.wrapping_add(CENTROID_INIT))?;
        let mut history = CsvOut::create(cfg.output_dir.join(format!("refine_history{suffix}.csv")), &header)?;
        let mut write_failure = None;
        let outcome = refine(
            &tasks,
            ck.model.clone(),
            centroids,
            &cfg.refine.refine_config(method),
            &cfg.train.train_config(),
            cfg.seed.wrapping_add(REFINE_BATCHES),
            labels.as_deref(),
            |e| {
                if write_failure.is_none() {
                    write_failure = history.row(&refine_row(method, e, labels.is_some())).err();
                }
            },
        );
        if let Some(e) = write_failure {
            return Err(e);
        }
        let outcome = outcome?;
        if !outcome.converged {
            log::warn!("{} init: stopped at max_epochs = {} before assignments settled", method.name(), cfg.refine.max_epochs);
        }

        let state = &outcome.state;
        let mut assignments = String::from("segment_id,hard_label");
        for j in 0..k {
            let _ = write!(assignments, ",q_{j}");
        }
        assignments.push('\n');
        for (i, label) in state.hard_labels.iter().enumerate() {
            let _ = write!(assignments, "{i},{label}");
            for v in state.q.row(i) {
                let _ = write!(assignments, ",{v}");
            }
            assignments.push('\n');
        }
        write_text(&cfg.output_dir.join(format!("assignments{suffix}.csv")), &assignments)?;

        let refined = Checkpoint {
            stage: "refine".into(),
            seed: cfg.seed,
            model: outcome.model,
            normalization: ck.normalization.clone(),
            init_method: Some(method),
            centroids: Some(outcome.state.centroids.clone()),
            config_echo: cfg.echo("refine"),
        };
        refined.save(&cfg.output_dir.join(format!("refined{suffix}.ckpt")))?;
        let last = outcome.history.last().expect("at least one epoch");
        let metrics = match (last.acc, last.nmi) {
            (Some(a), Some(n)) => format!(", train ACC {:.4}, NMI {:.4}", a, n),
            _ => String::new(),
        };
        println!("refine ({} init): {} epochs{metrics}", method.name(), outcome.history.len());
    }
    Ok(())
}

fn init_label(method: Option<InitMethod>) -> &'static str {
    match method {
        Some(InitMethod::Kmeans) => "end-to-end (k-means init)",
        Some(InitMethod::Ward) => "end-to-end (Ward init)",
        None => "end-to-end",
    }
}

fn cmd_evaluate(cfg: &RunConfig, pretrained: &Path, refined: Vec<PathBuf>) -> Result<(), CliError> {
    let data = load_splits(cfg)?;
    let d = data.train.num_channels();
    let k = data.train.config.num_clusters;
    let pre = if cfg.eval.embedding || pretrained.is_file() { Some(load_checkpoint(cfg, pretrained, d)?) } else { None };
    let refined = if refined.is_empty() && cfg.eval.end_to_end {
        ["refined.ckpt", "refined_kmeans.ckpt", "refined_ward.ckpt"]
            .iter()
            .map(|f| cfg.output_dir.join(f))
            .filter(|p| p.is_file())
            .collect()
    } else {
        refined
    };
    if cfg.eval.end_to_end && refined.is_empty() {
        log::warn!("no refined checkpoint found; skipping end-to-end rows");
    }
    let refined: Vec<Checkpoint> = refined
        .iter()
        .map(|p| {
            let ck = load_checkpoint(cfg, p, d)?;
            if ck.centroids.is_none() {
                return Err(CliError::Config(format!("{} holds no centroids", p.display())));
            }
            Ok(ck)
        })
        .collect::<Result<_, _>>()?;

    let stats = match &pre {
        Some(ck) => normalization_of(ck, pretrained)?,
        None => fit_normalization(&data.train)?,
    };
    let mut reports: Vec<EvalReport> = Vec::new();
    for split in &cfg.eval.splits {
        let raw_set = match split.as_str() {
            "train" => &data.train,
            _ => match &data.test {
                Some(t) => t,
                None => {
                    log::warn!("no test split configured; skipping test rows");
                    continue;
                }
            },
        };
        let set = apply_normalization(raw_set, &stats)?;
        let truth = set.labels();
        if truth.is_none() {
            log::warn!("{split} split has unlabeled segments; metrics reported as n/a");
        }
        let truth = truth.as_deref();
        if cfg.eval.raw {
            reports.extend(baseline_reports(&set.flattened(), truth, k, cfg.seed, "raw", split, &cfg.eval.baselines)?);
        }
        let tasks = build_tasks(&set)?;
        if let (true, Some(ck)) = (cfg.eval.embedding, &pre) {
            let z = embed_tasks(&tasks, &ck.model)?;
            reports.extend(baseline_reports(&z, truth, k, cfg.seed, "embedding", split, &cfg.eval.baselines)?);
        }
        if cfg.eval.end_to_end {
            for ck in &refined {
                let centroids = ck.centroids.as_ref().expect("checked above");
                let (labels, _) = assign_tasks(&tasks, &ck.model, centroids)?;
                reports.push(
                    EvalReport::score(init_label(ck.init_method), split, "end-to-end", &labels, truth, centroids.rows())
                        .map_err(|e| CliError::Config(e.to_string()))?,
                );
            }
        }
    }

    prepare_output(cfg, "evaluate")?;
    let mut csv = format!("{}\n", EvalReport::CSV_HEADER);
    for r in &reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_text(&cfg.output_dir.join("eval_report.csv"), &csv)?;
    let table = format_table(&reports, cfg.eval.nmi_geometric);
    write_text(&cfg.output_dir.join("eval_report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_export(cfg: &RunConfig, ckpt_path: &Path, split: &str, out: &Path) -> Result<(), CliError> {
    let data = load_splits(cfg)?;
    let raw = match split {
        "train" => &data.train,
        _ => data.test.as_ref().ok_or_else(|| CliError::Config("dataset.test is not set".into()))?,
    };
    let ck = load_checkpoint(cfg, ckpt_path, raw.num_channels())?;
    let set = apply_normalization(raw, &normalization_of(&ck, ckpt_path)?)?;
    let z = embed_tasks(&build_tasks(&set)?, &ck.model)?;

    let mut text = "segment_id".to_string();
    for j in 0..z.cols() {
        let _ = write!(text, ",z_{j}");
    }
    text.push_str(",label\n");
    for (i, seg) in set.segments.iter().enumerate() {
        let _ = write!(text, "{i}");
        for v in z.row(i) {
            let _ = write!(text, ",{v}");
        }
        let label = seg.label.map_or(-1, |l| l as i64);
        let _ = writeln!(text, ",{label}");
    }
    prepare_output(cfg, "export-embeddings")?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_text(out, &text)?;
    log::info!("wrote {} embeddings to {}", z.rows(), out.display());
    Ok(())
}
