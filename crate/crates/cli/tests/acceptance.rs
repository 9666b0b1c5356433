//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed.
//! Criterion 6 needs the UCI HAR archive: point `SEQCLUSTER_UCIHAR_DIR` at
//! the extracted directory (optionally `SEQCLUSTER_UCIHAR_EPOCHS`, default 10).

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqcluster::baselines::{agglomerative, kmeans_lloyd, kmeans_plus_plus, Linkage};
use seqcluster::cah::{kl_loss, soft_assign, target_distribution};
use seqcluster::datasets::TaskTriple;
use seqcluster::metrics::{clustering_accuracy, hungarian, nmi};
use seqcluster::model::{autoencoder_loss, autoencoder_pass, ModelConfig, ModelParams};
use seqcluster::numerics::{compare_gradients, finite_difference_grad, Graph, NodeId, NumericsError, Tensor};

type Check = Result<String, String>;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

// ---- 1: gradients

const REL: f64 = 1e-4;
const ABS: f64 = 1e-6;

type Build = dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId, NumericsError>;

fn weighted_sum(g: &mut Graph, out: NodeId, seed: u64) -> Result<NodeId, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.value(out).shape().to_vec();
    let w = rand_tensor(&mut rng, &[g.value(out).len()], -1.0, 1.0).reshape(shape).unwrap();
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn grad_check(name: &str, build: &Build, inputs: &[Tensor], seed: u64) -> Result<(), String> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &ids).map_err(|e| format!("{name}: {e}"))?;
    let loss = weighted_sum(&mut g, out, seed).map_err(|e| e.to_string())?;
    g.backward(loss).map_err(|e| e.to_string())?;
    for (k, id) in ids.iter().enumerate() {
        let analytic = g.grad(*id).map_err(|e| e.to_string())?;
        let numeric = finite_difference_grad(
            |x| {
                let mut probe = inputs.to_vec();
                probe[k] = x.clone();
                let mut g = Graph::new();
                let ids: Vec<NodeId> = probe.iter().map(|t| g.constant(t.clone())).collect();
                let out = build(&mut g, &ids)?;
                let loss = weighted_sum(&mut g, out, seed)?;
                Ok(g.value(loss).item())
            },
            &inputs[k],
            1e-5,
        )
        .map_err(|e| e.to_string())?;
        let report = compare_gradients(&analytic, &numeric, REL, ABS);
        ensure(report.passed(), || format!("{name} input {k}: {report:?}"))?;
    }
    Ok(())
}

fn criterion_1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut count = 0;
    for trial in 0..100u64 {
        let (m, n, k) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
        let a = rand_tensor(&mut rng, &[m, n], -2.0, 2.0);
        let b = rand_tensor(&mut rng, &[m, n], -2.0, 2.0);
        let pos = rand_tensor(&mut rng, &[m, n], 0.5, 2.0);
        let mk = rand_tensor(&mut rng, &[m, k], -1.0, 1.0);
        let kn = rand_tensor(&mut rng, &[k, n], -1.0, 1.0);
        let row = rand_tensor(&mut rng, &[1, n], -1.0, 1.0);
        let col = rand_tensor(&mut rng, &[m, 1], -1.0, 1.0);
        let start = rng.random_range(0..n);
        let (h, batch, input) = (rng.random_range(1..5), rng.random_range(1..4), rng.random_range(1..4));
        let gru = vec![
            rand_tensor(&mut rng, &[batch, input], -1.0, 1.0),
            rand_tensor(&mut rng, &[batch, h], -1.0, 1.0),
            rand_tensor(&mut rng, &[input, 3 * h], -0.8, 0.8),
            rand_tensor(&mut rng, &[h, 3 * h], -0.8, 0.8),
            rand_tensor(&mut rng, &[1, 3 * h], -0.5, 0.5),
        ];
        let cases: Vec<(&str, Box<Build>, Vec<Tensor>)> = vec![
            ("matmul", Box::new(|g, i| g.matmul(i[0], i[1])), vec![mk.clone(), kn.clone()]),
            ("add", Box::new(|g, i| g.add(i[0], i[1])), vec![a.clone(), b.clone()]),
            ("sub", Box::new(|g, i| g.sub(i[0], i[1])), vec![a.clone(), b.clone()]),
            ("mul", Box::new(|g, i| g.mul(i[0], i[1])), vec![a.clone(), b.clone()]),
            ("div", Box::new(|g, i| g.div(i[0], i[1])), vec![a.clone(), pos.clone()]),
            ("scale", Box::new(|g, i| g.scale(i[0], 0.7)), vec![a.clone()]),
            ("add_scalar", Box::new(|g, i| g.add_scalar(i[0], -0.2)), vec![a.clone()]),
            ("neg", Box::new(|g, i| g.neg(i[0])), vec![a.clone()]),
            ("sigmoid", Box::new(|g, i| g.sigmoid(i[0])), vec![a.clone()]),
            ("tanh", Box::new(|g, i| g.tanh(i[0])), vec![a.clone()]),
            ("log", Box::new(|g, i| g.log(i[0])), vec![pos.clone()]),
            ("exp", Box::new(|g, i| g.exp(i[0])), vec![a.clone()]),
            ("square", Box::new(|g, i| g.square(i[0])), vec![a.clone()]),
            ("recip", Box::new(|g, i| g.recip(i[0])), vec![pos.clone()]),
            ("sum", Box::new(|g, i| g.sum(i[0])), vec![a.clone()]),
            ("mean", Box::new(|g, i| g.mean(i[0])), vec![a.clone()]),
            ("sum_rows", Box::new(|g, i| g.sum_rows(i[0])), vec![a.clone()]),
            ("sum_cols", Box::new(|g, i| g.sum_cols(i[0])), vec![a.clone()]),
            ("concat", Box::new(|g, i| g.concat(&[i[0], i[1]], 1)), vec![a.clone(), col.clone()]),
            ("slice", Box::new(move |g, i| g.slice(i[0], 1, start, n - start)), vec![a.clone()]),
            ("broadcast", Box::new(move |g, i| g.broadcast(i[0], m, n)), vec![row.clone()]),
            ("transpose", Box::new(|g, i| g.transpose(i[0])), vec![a.clone()]),
            ("linear", Box::new(|g, i| g.linear(i[0], i[1], i[2])), vec![mk, kn, row]),
            ("gru_cell", Box::new(|g, i| g.gru_cell(i[0], i[1], i[2], i[3], i[4])), gru),
        ];
        for (name, build, inputs) in &cases {
            grad_check(name, build.as_ref(), inputs, trial)?;
            count += 1;
        }
    }

    // scaled-down model: T/2 = 4, d = 2, z = 3, hidden = 5
    let config = ModelConfig { input_dim: 2, hidden: 5, layers: 2, embedding_dim: 3 };
    let model = ModelParams::init(config, 2).unwrap();
    let tasks: Vec<TaskTriple> = (0..2)
        .map(|_| TaskTriple {
            input: rand_tensor(&mut rng, &[4, 2], -1.5, 1.5),
            rec_target: rand_tensor(&mut rng, &[4, 2], -1.5, 1.5),
            fut_target: rand_tensor(&mut rng, &[4, 2], -1.5, 1.5),
        })
        .collect();
    let batch: Vec<&TaskTriple> = tasks.iter().collect();
    let mut g = Graph::new();
    let p = model.bind(&mut g, true);
    let pass = autoencoder_pass(&mut g, &model, &p, &batch).unwrap();
    g.backward(pass.loss).unwrap();
    let mut params = 0;
    for (i, (name, t)) in model.named().enumerate() {
        let analytic = g.grad(p[i]).unwrap();
        let numeric = finite_difference_grad(
            |x| {
                let mut probe = model.clone();
                probe.tensors_mut()[i] = x.clone();
                Ok(autoencoder_loss(&batch, &probe).unwrap())
            },
            t,
            1e-5,
        )
        .unwrap();
        let report = compare_gradients(&analytic, &numeric, REL, ABS);
        ensure(report.passed(), || format!("model {name}: {report:?}"))?;
        params += t.len();
    }
    Ok(format!("{count} primitive checks, {params} model parameters"))
}

// ---- 2: soft assignment and target oracles

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn criterion_2() -> Check {
    let t = |rows: &[&[f64]]| Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
    let q = soft_assign(&t(&[&[0.0, 0.0]]), &t(&[&[0.0, 0.0], &[3f64.sqrt(), 0.0]])).unwrap();
    ensure(close(q.at(0, 0), 0.8, 1e-12) && close(q.at(0, 1), 0.2, 1e-12), || format!("q = {:?}", q.data()))?;
    let q = soft_assign(&t(&[&[0.0]]), &t(&[&[-2.0], &[2.0]])).unwrap();
    ensure(q.data().iter().all(|&v| close(v, 0.5, 1e-12)), || "equidistant point not uniform".into())?;
    let p = target_distribution(&t(&[&[0.8, 0.2]])).unwrap();
    ensure(close(p.at(0, 0), 0.8, 1e-12) && close(p.at(0, 1), 0.2, 1e-12), || "n = 1 fixed point".into())?;
    let q2 = t(&[&[0.9, 0.1], &[0.6, 0.4]]);
    let p = target_distribution(&q2).unwrap();
    ensure(close(p.at(0, 0), 0.54 / 0.56, 1e-12) && close(p.at(0, 1), 0.02 / 0.56, 1e-12), || format!("p = {:?}", p.data()))?;
    ensure(p.at(0, 0) >= q2.at(0, 0), || "confident row did not harden".into())?;
    let p = target_distribution(&Tensor::filled(&[4, 4], 0.25)).unwrap();
    ensure(p.data().iter().all(|&v| close(v, 0.25, 1e-12)), || "uniform Q must give uniform P".into())?;
    ensure(close(kl_loss(&t(&[&[1.0, 0.0]]), &t(&[&[0.5, 0.5]])).unwrap(), 2f64.ln(), 1e-12), || "KL([1,0]||[.5,.5])".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (n, k, m) = (rng.random_range(1..40), rng.random_range(2..10), rng.random_range(1..8));
        let spread = [0.1, 1.0, 10.0, 100.0][rng.random_range(0..4)];
        let q = soft_assign(&rand_tensor(&mut rng, &[n, m], -spread, spread), &rand_tensor(&mut rng, &[k, m], -spread, spread)).unwrap();
        let p = target_distribution(&q).unwrap();
        for s in [&q, &p] {
            for i in 0..n {
                worst = worst.max((s.row(i).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    ensure(worst <= 1e-9, || format!("row sum off by {worst:e}"))?;
    Ok(format!("hand examples at 1e-12; max row-sum error {worst:.1e} over 1000 instances"))
}

// ---- 3: metrics

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..200 {
        let k = 1 + trial % 6;
        let n = rng.random_range(1..=50);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let best = permutations(k)
            .iter()
            .map(|p| pred.iter().zip(&truth).filter(|(a, b)| p[**a] == **b).count())
            .max()
            .unwrap() as f64
            / n as f64;
        let acc = clustering_accuracy(&pred, &truth).unwrap();
        ensure(close(acc, best, 1e-12), || format!("trial {trial}: ACC {acc} vs brute force {best}"))?;
    }
    for _ in 0..100 {
        let cost: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
        let brute = permutations(5).iter().map(|p| (0..5).map(|i| cost[i][p[i]]).sum::<f64>()).fold(f64::INFINITY, f64::min);
        let (_, total) = hungarian(&cost).unwrap();
        ensure(close(total, brute, 1e-9), || format!("hungarian {total} vs {brute}"))?;
    }
    let a = [0, 0, 1, 1, 2, 2];
    ensure(close(nmi(&a, &a).unwrap(), 1.0, 1e-12), || "identical partitions".into())?;
    let u: Vec<usize> = (0..24).map(|i| i % 2).collect();
    let v: Vec<usize> = (0..24).map(|i| (i / 2) % 3).collect();
    ensure(close(nmi(&u, &v).unwrap(), 0.0, 1e-12), || "independent partitions".into())?;
    Ok("200 ACC instances, 100 assignment instances, NMI extremes".into())
}

// ---- 4: baselines

fn linkage_distance(x: &Tensor, a: &[usize], b: &[usize], linkage: Linkage) -> f64 {
    let d = |i: usize, j: usize| x.row(i).iter().zip(x.row(j)).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    let pairs = || a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j)));
    match linkage {
        Linkage::Average => pairs().map(|(i, j)| d(i, j)).sum::<f64>() / (a.len() * b.len()) as f64,
        Linkage::Complete => pairs().map(|(i, j)| d(i, j)).fold(0.0, f64::max),
        Linkage::Ward => {
            let mean = |c: &[usize]| -> Vec<f64> {
                (0..x.cols()).map(|f| c.iter().map(|&i| x.at(i, f)).sum::<f64>() / c.len() as f64).collect()
            };
            let sq: f64 = mean(a).iter().zip(mean(b)).map(|(p, q)| (p - q) * (p - q)).sum();
            let (na, nb) = (a.len() as f64, b.len() as f64);
            na * nb / (na + nb) * sq
        }
    }
}

/// Partition after greedily merging down to `k` clusters, recomputing
/// every linkage from its definition; labels by first appearance.
fn brute_force_cut(x: &Tensor, k: usize, linkage: Linkage) -> Vec<usize> {
    let n = x.rows();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while clusters.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let d = linkage_distance(x, &clusters[i], &clusters[j], linkage);
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let moved = clusters.remove(best.2);
        clusters[best.1].extend(moved);
    }
    let mut owner = vec![0; n];
    for (c, members) in clusters.iter().enumerate() {
        for &i in members {
            owner[i] = c;
        }
    }
    let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
    owner
        .iter()
        .map(|o| {
            let next = ids.len();
            *ids.entry(*o).or_insert(next)
        })
        .collect()
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut compared = 0;
    for trial in 0..100 {
        let n = rng.random_range(2..=8);
        let m = rng.random_range(1..=3);
        let x = rand_tensor(&mut rng, &[n, m], -3.0, 3.0);
        for linkage in Linkage::ALL {
            for k in 1..=n {
                let got = agglomerative(&x, k, linkage).unwrap().labels;
                let want = brute_force_cut(&x, k, linkage);
                ensure(got == want, || format!("trial {trial} {linkage:?} k = {k}: {got:?} vs {want:?}"))?;
                compared += 1;
            }
        }
    }
    for run in 0..100 {
        let n = rng.random_range(5..80);
        let k = rng.random_range(1..=6);
        let m = rng.random_range(1..5);
        let x = rand_tensor(&mut rng, &[n, m], -5.0, 5.0);
        let init = kmeans_plus_plus(&x, k, &mut rng).unwrap();
        let (_, history) = kmeans_lloyd(&x, init, 300, 1e-6).unwrap();
        ensure(history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-12), || format!("run {run}: {history:?}"))?;
    }
    Ok(format!("{compared} dendrogram cuts, 100 Lloyd runs"))
}

// ---- CLI helpers

fn seqcluster(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_seqcluster")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("seqcluster {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

type Report = BTreeMap<(String, String, String), (f64, f64)>;

/// `(space, method, split) -> (acc, nmi)` from eval_report.csv.
fn read_report(path: &Path) -> Result<Report, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{line}: {e}"));
        out.insert((f[0].into(), f[1].into(), f[2].into()), (num(f[5])?, num(f[6])?));
    }
    Ok(out)
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

// ---- 5: synthetic end-to-end recovery

fn criterion_5() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let (data, run) = (path_str(&data), path_str(&run));
    seqcluster(&["synth", "--seed", "7", "--regimes", "3", "--channels", "4", "--window-len", "32",
        "--segments-per-regime", "100", "--noise-std", "0.05", "--output-dir", data])?;
    let common = ["--train", data, "--seed", "7", "--threads", "1", "--output-dir", run];
    seqcluster(&[&["pretrain", "--epochs", "30"], &common[..]].concat())?;
    seqcluster(&[&["refine", "--init", "ward"], &common[..]].concat())?;
    seqcluster(&[&["evaluate"], &common[..]].concat())?;
    let report = read_report(&Path::new(run).join("eval_report.csv"))?;
    let key = |s: &str, m: &str| (s.to_string(), m.to_string(), "train".to_string());
    let (acc, nmi) = report[&key("end-to-end", "end-to-end (Ward init)")];
    let (km_acc, _) = report[&key("embedding", "k-means")];
    ensure(acc >= 0.95, || format!("train ACC {acc:.4} < 0.95"))?;
    ensure(nmi >= 0.90, || format!("train NMI {nmi:.4} < 0.90"))?;
    ensure(acc >= km_acc, || format!("refined ACC {acc:.4} < embedding k-means ACC {km_acc:.4}"))?;
    Ok(format!("ACC {acc:.4}, NMI {nmi:.4}, embedding k-means ACC {km_acc:.4}"))
}

// ---- 6: UCI HAR direction check

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_6(archive: &Path) -> Check {
    let epochs = std::env::var("SEQCLUSTER_UCIHAR_EPOCHS").unwrap_or_else(|_| "10".into());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (mut raw, mut emb) = (Vec::new(), Vec::new());
    for seed in ["0", "1", "2"] {
        let run = dir.path().join(format!("seed{seed}"));
        let cfg = dir.path().join(format!("seed{seed}.toml"));
        let text = format!(
            "[dataset]\nucihar = {:?}\nsubsample = 1000\n[eval]\nsplits = [\"train\"]\nbaselines = [\"kmeans\"]\nend_to_end = false\n",
            archive.canonicalize().map_err(|e| e.to_string())?
        );
        fs::write(&cfg, text).map_err(|e| e.to_string())?;
        let common = ["-c", path_str(&cfg), "--seed", seed, "--threads", "1", "--output-dir", path_str(&run)];
        seqcluster(&[&["pretrain", "--epochs", &epochs], &common[..]].concat())?;
        seqcluster(&[&["evaluate"], &common[..]].concat())?;
        let report = read_report(&run.join("eval_report.csv"))?;
        let get = |space: &str| report[&(space.to_string(), "k-means".to_string(), "train".to_string())].0;
        raw.push(get("raw"));
        emb.push(get("embedding"));
    }
    let (r, e) = (median(raw.clone()), median(emb.clone()));
    ensure(e > r, || format!("embedding k-means ACC median {e:.4} <= raw {r:.4} (raw {raw:?}, embedding {emb:?})"))?;
    Ok(format!("median k-means ACC: embedding {e:.4} > raw {r:.4} ({epochs} epochs per seed)"))
}

// ---- 8: determinism

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.clone(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_8() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let (data_s, run_s) = (path_str(&data), path_str(&run));
    let pipeline = || -> Result<(), String> {
        seqcluster(&["synth", "--seed", "3", "--segments-per-regime", "12", "--window-len", "16", "--threads", "1", "--output-dir", data_s])?;
        let common = ["--train", data_s, "--test", data_s, "--seed", "3", "--threads", "1", "--output-dir", run_s,
            "--hidden", "8", "--embedding-dim", "4"];
        seqcluster(&[&["pretrain", "--epochs", "2", "--batch-size", "8"], &common[..]].concat())?;
        seqcluster(&[&["refine", "--init", "both", "--max-epochs", "2", "--batch-size", "8"], &common[..]].concat())?;
        seqcluster(&[&["evaluate"], &common[..]].concat())?;
        seqcluster(&[&["export-embeddings", "--split", "test"], &common[..]].concat())?;
        Ok(())
    };
    pipeline()?;
    let first = snapshot(dir.path());
    pipeline()?;
    let second = snapshot(dir.path());
    ensure(first.keys().eq(second.keys()), || "different file sets".into())?;
    for (path, bytes) in &first {
        ensure(second[path] == *bytes, || format!("{} differs between runs", path.display()))?;
    }
    Ok(format!("{} output files byte-identical across reruns", first.len()))
}

fn run(name: &str, limit: Duration, f: impl FnOnce() -> Check) -> Outcome {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let elapsed = start.elapsed();
    let timing = format!("{:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs());
    let outcome = match result {
        Ok(detail) if elapsed <= limit => Outcome::Pass(format!("{detail} ({timing})")),
        Ok(detail) => Outcome::Fail(format!("{detail}; over time budget ({timing})")),
        Err(why) => Outcome::Fail(format!("{why} ({timing})")),
    };
    report(name, &outcome);
    outcome
}

fn report(name: &str, outcome: &Outcome) {
    let (tag, detail) = match outcome {
        Outcome::Pass(d) => ("PASS", d),
        Outcome::Fail(d) => ("FAIL", d),
        Outcome::Skip(d) => ("SKIP", d),
    };
    println!("[{tag}] {name}: {detail}");
}

fn main() {
    // `cargo test -- --list` and filters: this target has a single implicit test
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let min = |m: u64| Duration::from_secs(60 * m);
    let mut outcomes = vec![
        run("1 gradient correctness", Duration::from_secs(30), criterion_1),
        run("2 soft assignment and target oracles", Duration::from_secs(5), criterion_2),
        run("3 metric oracles", Duration::from_secs(30), criterion_3),
        run("4 baseline oracles", Duration::from_secs(60), criterion_4),
        run("5 synthetic end-to-end recovery", min(10), criterion_5),
    ];
    let c6 = "6 UCI HAR embedding beats raw k-means";
    match std::env::var_os("SEQCLUSTER_UCIHAR_DIR") {
        Some(dir) => outcomes.push(run(c6, min(45), || criterion_6(Path::new(&dir)))),
        None => {
            let skip = Outcome::Skip("UNVERIFIED, set SEQCLUSTER_UCIHAR_DIR to the extracted UCI HAR archive".into());
            report(c6, &skip);
            outcomes.push(skip);
        }
    }
    let stretch = Outcome::Skip("optional full-scale UCI HAR target (ACC within 8 points of 78.79%), not run".into());
    report("7 full-scale reproduction", &stretch);
    outcomes.push(stretch);
    outcomes.push(run("8 determinism", min(5), criterion_8));

    let failed = outcomes.iter().filter(|o| matches!(o, Outcome::Fail(_))).count();
    println!("acceptance: {} passed, {failed} failed, {} skipped",
        outcomes.iter().filter(|o| matches!(o, Outcome::Pass(_))).count(),
        outcomes.iter().filter(|o| matches!(o, Outcome::Skip(_))).count());
    if failed > 0 {
        std::process::exit(1);
    }
}
