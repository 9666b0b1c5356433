//! Cluster assignment hardening.
//!
//! Embeddings are softly assigned to trainable centroids with a Student-t
//! kernel. A sharpened target distribution, recomputed once per epoch over
//! the whole training set and held constant within it, supplies a KL
//! objective that is optimized jointly with the autoencoder loss.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{agglomerative, cluster_means, kmeans, sq_dist, BaselineError, KMeansConfig, Linkage};
use crate::datasets::TaskTriple;
use crate::metrics::{assignment_change, clustering_accuracy, nmi, MetricsError};
use crate::model::{autoencoder_pass, encode_all, BatchOrder, ModelError, ModelParams, TrainConfig};
use crate::numerics::{Adam, Graph, NodeId, NumericsError, Tensor};

#[derive(Debug, Error)]
pub enum CahError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid refinement configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

impl From<NumericsError> for CahError {
    fn from(e: NumericsError) -> Self {
        CahError::Model(e.into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    Kmeans,
    Ward,
}

impl InitMethod {
    pub fn name(self) -> &'static str {
        match self {
            InitMethod::Kmeans => "kmeans",
            InitMethod::Ward => "ward",
        }
    }
}

impl FromStr for InitMethod {
    type Err = CahError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kmeans" => Ok(InitMethod::Kmeans),
            "ward" => Ok(InitMethod::Ward),
            _ => Err(CahError::Config(format!("unknown init method {s:?} (expected kmeans or ward)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Weight of the clustering loss.
    pub gamma: f64,
    /// Refinement stops once fewer than this fraction of hard labels change
    /// between consecutive epochs.
    pub stop_threshold: f64,
    pub max_epochs: usize,
    pub init_method: InitMethod,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { gamma: 0.1, stop_threshold: 0.001, max_epochs: 200, init_method: InitMethod::Ward }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), CahError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(CahError::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.stop_threshold > 0.0 && self.stop_threshold < 1.0) {
            return Err(CahError::Config(format!("stop_threshold must lie in (0, 1), got {}", self.stop_threshold)));
        }
        if self.max_epochs == 0 {
            return Err(CahError::Config("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Row-wise argmax, lowest index on ties.
pub fn hard_labels(q: &Tensor) -> Vec<usize> {
    (0..q.rows())
        .map(|i| {
            let row = q.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn check_pair(z: &Tensor, centroids: &Tensor) -> Result<(), CahError> {
    if z.rank() != 2 || centroids.rank() != 2 || z.cols() != centroids.cols() {
        return Err(CahError::Config(format!(
            "embeddings {:?} and centroids {:?} disagree",
            z.shape(),
            centroids.shape()
        )));
    }
    if centroids.rows() < 2 {
        return Err(CahError::Config("need at least 2 centroids".into()));
    }
    Ok(())
}

/// Student-t soft assignments `n x k`.
pub fn soft_assign(z: &Tensor, centroids: &Tensor) -> Result<Tensor, CahError> {
    check_pair(z, centroids)?;
    let k = centroids.rows();
    for a in 0..k {
        for b in a + 1..k {
            if centroids.row(a) == centroids.row(b) {
                log::warn!("centroids {a} and {b} coincide");
            }
        }
    }
    let mut q = Vec::with_capacity(z.rows() * k);
    for i in 0..z.rows() {
        let kernel: Vec<f64> = (0..k).map(|j| 1.0 / (1.0 + sq_dist(z.row(i), centroids.row(j)))).collect();
        let total: f64 = kernel.iter().sum();
        q.extend(kernel.iter().map(|v| v / total));
    }
    Tensor::new(vec![z.rows(), k], q).map_err(|_| CahError::NonFinite("soft_assign"))
}

/// Sharpened targets: squares of `q` divided by cluster frequency, renormalized per row.
pub fn target_distribution(q: &Tensor) -> Result<Tensor, CahError> {
    let (n, k) = q.dims2();
    let freq: Vec<f64> = (0..k).map(|j| (0..n).map(|i| q.at(i, j)).sum()).collect();
    let mut p = Vec::with_capacity(n * k);
    for i in 0..n {
        let w: Vec<f64> = q.row(i).iter().zip(&freq).map(|(v, f)| v * v / f).collect();
        let total: f64 = w.iter().sum();
        p.extend(w.iter().map(|v| v / total));
    }
    Tensor::new(vec![n, k], p).map_err(|_| CahError::NonFinite("target_distribution"))
}

/// Mean over rows of `KL(p_i || q_i)`, with `0 log 0 = 0`.
pub fn kl_loss(p: &Tensor, q: &Tensor) -> Result<f64, CahError> {
    if p.shape() != q.shape() || p.rank() != 2 {
        return Err(CahError::Config(format!("P {:?} and Q {:?} differ in shape", p.shape(), q.shape())));
    }
    let total: f64 = p
        .data()
        .iter()
        .zip(q.data())
        .map(|(&pv, &qv)| if pv == 0.0 { 0.0 } else { pv * (pv / qv).ln() })
        .sum();
    let loss = total / p.rows() as f64;
    if !loss.is_finite() {
        return Err(CahError::NonFinite("kl_loss"));
    }
    Ok(loss)
}

/// Graph version of [`soft_assign`] for `B x z` embeddings and `k x z` centroids.
pub fn soft_assign_graph(g: &mut Graph, z: NodeId, centroids: NodeId, k: usize) -> Result<NodeId, NumericsError> {
    let (b, m) = g.value(z).dims2();
    let mut dists = Vec::with_capacity(k);
    for j in 0..k {
        let c = g.slice(centroids, 0, j, 1)?;
        let c = g.broadcast(c, b, m)?;
        let diff = g.sub(z, c)?;
        let sq = g.square(diff)?;
        dists.push(g.sum_rows(sq)?);
    }
    let d = g.concat(&dists, 1)?;
    let shifted = g.add_scalar(d, 1.0)?;
    let kernel = g.recip(shifted)?;
    let total = g.sum_rows(kernel)?;
    let total = g.broadcast(total, b, k)?;
    g.div(kernel, total)
}

/// Batch-mean `KL(P || Q)` with `P` a constant.
pub fn kl_loss_graph(g: &mut Graph, p: &Tensor, q: NodeId) -> Result<NodeId, NumericsError> {
    let rows = p.rows() as f64;
    let entropy: f64 = p.data().iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum();
    let pn = g.constant(p.clone());
    let log_q = g.log(q)?;
    let cross = g.mul(pn, log_q)?;
    let cross = g.sum(cross)?;
    let neg = g.scale(cross, -1.0 / rows)?;
    g.add_scalar(neg, entropy / rows)
}

/// Initial centroids (`k x z`) from pretrained embeddings.
pub fn init_centroids(z: &Tensor, method: InitMethod, k: usize, seed: u64) -> Result<Tensor, CahError> {
    match method {
        InitMethod::Kmeans => Ok(kmeans(z, k, seed, &KMeansConfig::default())?.centroids.expect("k-means yields centroids")),
        InitMethod::Ward => {
            let labels = agglomerative(z, k, Linkage::Ward)?.labels;
            Ok(cluster_means(z, &labels, k))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterState {
    pub centroids: Tensor,
    pub q: Tensor,
    pub p: Tensor,
    pub hard_labels: Vec<usize>,
}

impl ClusterState {
    pub fn from_embeddings(z: &Tensor, centroids: Tensor) -> Result<Self, CahError> {
        let q = soft_assign(z, &centroids)?;
        let p = target_distribution(&q)?;
        let hard_labels = hard_labels(&q);
        Ok(Self { centroids, q, p, hard_labels })
    }
}

/// One refinement epoch. Losses are dataset means of the batch values;
/// the change fraction and metrics describe the assignments after the epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub cluster_loss: f64,
    pub ae_loss: f64,
    pub assignment_change: f64,
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
}

pub struct RefineOutcome {
    pub model: ModelParams,
    pub state: ClusterState,
    pub history: Vec<RefineEpoch>,
    /// True when the assignment-change rule fired before `max_epochs`.
    pub converged: bool,
}

/// Embeddings of the task inputs.
pub fn embed_tasks(tasks: &[TaskTriple], model: &ModelParams) -> Result<Tensor, ModelError> {
    let inputs: Vec<&Tensor> = tasks.iter().map(|t| &t.input).collect();
    encode_all(&inputs, model, 64)
}

/// Jointly minimizes `gamma * KL(P || Q) + L_AE` over the autoencoder and
/// the centroids until the hard assignments settle.
///
/// Batching and Adam settings come from `train`; its epoch count is ignored.
/// `labels`, when given, only feed the per-epoch accuracy and NMI columns.
#[allow(clippy::too_many_arguments)]
pub fn refine(
    tasks: &[TaskTriple],
    model: ModelParams,
    centroids: Tensor,
    cfg: &RefineConfig,
    train: &TrainConfig,
    seed: u64,
    labels: Option<&[usize]>,
    mut on_epoch: impl FnMut(&RefineEpoch),
) -> Result<RefineOutcome, CahError> {
    cfg.validate()?;
    if tasks.is_empty() || train.batch_size == 0 {
        return Err(CahError::Config("need segments and a positive batch size".into()));
    }
    if labels.is_some_and(|l| l.len() != tasks.len()) {
        return Err(CahError::Config("label count does not match segment count".into()));
    }
    let k = centroids.rows();
    let mut model = model;
    let mut state = ClusterState::from_embeddings(&embed_tasks(tasks, &model)?, centroids)?;
    let mut adam = Adam::new(train.adam, model.tensors().iter().chain(std::iter::once(&state.centroids)));
    let mut batches = BatchOrder::new(tasks.len(), seed);
    let mut history = Vec::new();
    let mut converged = false;

    for epoch in 0..cfg.max_epochs {
        let order = batches.shuffle().to_vec();
        let (mut total, mut cluster, mut ae) = (0.0, 0.0, 0.0);
        for (b, idx) in order.chunks(train.batch_size).enumerate() {
            let diverged = |e: ModelError| ModelError::Diverged { epoch, batch: b, source: Box::new(e) };
            let batch: Vec<&TaskTriple> = idx.iter().map(|&i| &tasks[i]).collect();
            let p_batch = state.p.select_rows(idx);
            let mut g = Graph::new();
            let params = model.bind(&mut g, true);
            let omega = g.param(state.centroids.clone());
            let pass = autoencoder_pass(&mut g, &model, &params, &batch).map_err(diverged)?;
            let step = (|| -> Result<(NodeId, NodeId), NumericsError> {
                let q = soft_assign_graph(&mut g, pass.embedding, omega, k)?;
                let lc = kl_loss_graph(&mut g, &p_batch, q)?;
                let weighted = g.scale(lc, cfg.gamma)?;
                let loss = g.add(weighted, pass.loss)?;
                g.backward(loss)?;
                Ok((lc, loss))
            })();
            let (lc, loss) = step.map_err(|e| diverged(e.into()))?;
            let grads: Vec<Option<Tensor>> = params.iter().chain(std::iter::once(&omega)).map(|&id| g.grad(id).ok()).collect();
            let w = idx.len() as f64;
            total += g.value(loss).item() * w;
            cluster += g.value(lc).item() * w;
            ae += g.value(pass.loss).item() * w;
            drop(g);
            let mut targets: Vec<&mut Tensor> = model.tensors_mut().iter_mut().collect();
            targets.push(&mut state.centroids);
            adam.update(&mut targets, &grads, epoch).map_err(|e| diverged(e.into()))?;
        }

        let previous = std::mem::take(&mut state.hard_labels);
        state = ClusterState::from_embeddings(&embed_tasks(tasks, &model)?, state.centroids)?;
        let change = assignment_change(&previous, &state.hard_labels)?;
        let n = tasks.len() as f64;
        let (acc, nmi_score) = match labels {
            Some(truth) => (Some(clustering_accuracy(&state.hard_labels, truth)?), Some(nmi(&state.hard_labels, truth)?)),
            None => (None, None),
        };
        let record = RefineEpoch {
            epoch: epoch + 1,
            loss: total / n,
            cluster_loss: cluster / n,
            ae_loss: ae / n,
            assignment_change: change,
            acc,
            nmi: nmi_score,
        };
        log::info!(
            "refine epoch {} loss {:.6} change {:.5}",
            record.epoch,
            record.loss,
            record.assignment_change
        );
        on_epoch(&record);
        history.push(record);
        if change < cfg.stop_threshold {
            converged = true;
            break;
        }
    }
    Ok(RefineOutcome { model, state, history, converged })
}

/// Hard labels and soft assignments of unseen segments against fixed centroids.
pub fn assign_tasks(tasks: &[TaskTriple], model: &ModelParams, centroids: &Tensor) -> Result<(Vec<usize>, Tensor), CahError> {
    let q = soft_assign(&embed_tasks(tasks, model)?, centroids)?;
    Ok((hard_labels(&q), q))
}
