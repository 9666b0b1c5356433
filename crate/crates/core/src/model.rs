//! Multi-task recurrent autoencoder.
//!
//! A stacked bi-directional GRU encoder reads the first half of a segment and
//! its top layer's final forward and backward states are mapped through a
//! linear bottleneck to the embedding `z`. A shared back-projection turns `z`
//! into initial hidden states for two uni-directional GRU decoders: one
//! regenerates the input in reverse time order, the other predicts the second
//! half of the segment. Decoders run autoregressively (each step is fed the
//! previous step's projected output, the first step a zero vector).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::TaskTriple;
use crate::numerics::{Adam, AdamConfig, Graph, NodeId, NumericsError, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("training diverged at epoch {epoch}, batch {batch}: {source}")]
    Diverged {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<ModelError>,
    },
}

/// Decoder feeding scheme recorded in checkpoints.
pub const DECODER_SCHEME: &str = "autoregressive";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channels per time step.
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub embedding_dim: usize,
}

impl ModelConfig {
    /// Two layers of 256 units; a 64-dim embedding below 16 channels, 256 otherwise.
    pub fn for_channels(input_dim: usize) -> Self {
        Self { input_dim, hidden: 256, layers: 2, embedding_dim: default_embedding_dim(input_dim) }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 || self.embedding_dim == 0 {
            return Err(ModelError::Config(format!("all model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Closed-form count of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let (d, h, l, z) = (self.input_dim, self.hidden, self.layers, self.embedding_dim);
        let gru = |i: usize| 3 * h * i + 3 * h * h + 3 * h;
        let encoder = 2 * gru(d) + 2 * (l - 1) * gru(2 * h) + (2 * h * z + z);
        let back = z * l * h + l * h;
        let decoder = gru(d) + (l - 1) * gru(h) + (h * d + d);
        encoder + back + 2 * decoder
    }
}

pub fn default_embedding_dim(input_dim: usize) -> usize {
    if input_dim < 16 {
        64
    } else {
        256
    }
}

/// Indices of one GRU cell's tensors; gate blocks `[update | reset | candidate]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GruCellParams {
    pub w_x: usize,
    pub w_h: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearParams {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// `[forward, backward]` cell per layer.
    pub layers: Vec<[GruCellParams; 2]>,
    pub bottleneck: LinearParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStack {
    pub cells: Vec<GruCellParams>,
    pub output: LinearParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub back_projection: LinearParams,
    pub reconstruction: DecoderStack,
    pub future: DecoderStack,
}

/// All autoencoder weights as a flat list of named tensors plus the
/// structural index into it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    encoder: EncoderParams,
    decoders: DecoderParams,
}

struct Builder<'a> {
    names: Vec<String>,
    shapes: Vec<(Vec<usize>, f64)>,
    rng: Option<&'a mut ChaCha8Rng>,
    tensors: Vec<Tensor>,
}

impl Builder<'_> {
    fn tensor(&mut self, name: String, shape: Vec<usize>, bound: f64) -> usize {
        let n: usize = shape.iter().product();
        let data = match self.rng.as_deref_mut() {
            Some(rng) => (0..n).map(|_| rng.random_range(-bound..=bound)).collect(),
            None => vec![0.0; n],
        };
        self.tensors.push(Tensor::from_parts(shape.clone(), data));
        self.names.push(name);
        self.shapes.push((shape, bound));
        self.tensors.len() - 1
    }

    fn gru(&mut self, prefix: &str, input: usize, hidden: usize) -> GruCellParams {
        let bx = 1.0 / (input as f64).sqrt();
        let bh = 1.0 / (hidden as f64).sqrt();
        GruCellParams {
            w_x: self.tensor(format!("{prefix}.w_x"), vec![input, 3 * hidden], bx),
            w_h: self.tensor(format!("{prefix}.w_h"), vec![hidden, 3 * hidden], bh),
            b: self.tensor(format!("{prefix}.b"), vec![1, 3 * hidden], bh),
        }
    }

    fn linear(&mut self, prefix: &str, input: usize, output: usize) -> LinearParams {
        let bound = 1.0 / (input as f64).sqrt();
        LinearParams {
            w: self.tensor(format!("{prefix}.w"), vec![input, output], bound),
            b: self.tensor(format!("{prefix}.b"), vec![1, output], bound),
        }
    }

    fn decoder(&mut self, prefix: &str, c: &ModelConfig) -> DecoderStack {
        let cells = (0..c.layers)
            .map(|l| self.gru(&format!("{prefix}.l{l}"), if l == 0 { c.input_dim } else { c.hidden }, c.hidden))
            .collect();
        let output = self.linear(&format!("{prefix}.out"), c.hidden, c.input_dim);
        DecoderStack { cells, output }
    }
}

impl ModelParams {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, Some(&mut rng))
    }

    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        Self::build(config, None)
    }

    fn build(config: ModelConfig, rng: Option<&mut ChaCha8Rng>) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config;
        let mut b = Builder { names: Vec::new(), shapes: Vec::new(), rng, tensors: Vec::new() };
        let layers = (0..c.layers)
            .map(|l| {
                let input = if l == 0 { c.input_dim } else { 2 * c.hidden };
                [b.gru(&format!("encoder.l{l}.fwd"), input, c.hidden), b.gru(&format!("encoder.l{l}.bwd"), input, c.hidden)]
            })
            .collect();
        let bottleneck = b.linear("encoder.bottleneck", 2 * c.hidden, c.embedding_dim);
        let back_projection = b.linear("decoder.back_projection", c.embedding_dim, c.layers * c.hidden);
        let reconstruction = b.decoder("decoder.rec", &c);
        let future = b.decoder("decoder.fut", &c);
        Ok(Self {
            config,
            names: b.names,
            tensors: b.tensors,
            encoder: EncoderParams { layers, bottleneck },
            decoders: DecoderParams { back_projection, reconstruction, future },
        })
    }

    /// Rebuilds a model from named tensors, checking names and shapes.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        let mut model = Self::zeros(config)?;
        if named.len() != model.tensors.len() {
            return Err(ModelError::Config(format!("expected {} tensors, got {}", model.tensors.len(), named.len())));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != model.names[i] || t.shape() != model.tensors[i].shape() {
                return Err(ModelError::Config(format!(
                    "tensor {i}: got {name} {:?}, expected {} {:?}",
                    t.shape(),
                    model.names[i],
                    model.tensors[i].shape()
                )));
            }
            model.tensors[i] = t;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn decoders(&self) -> &DecoderParams {
        &self.decoders
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// `name shape` lines plus a total.
    pub fn params_summary(&self) -> String {
        let mut out = String::new();
        for (name, t) in self.named() {
            out.push_str(&format!("{name:<36} {:?}\n", t.shape()));
        }
        out.push_str(&format!("total parameters: {}\n", self.num_parameters()));
        out
    }

    /// Records every tensor as a graph leaf, in storage order.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<NodeId> {
        self.tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }
}

fn gru(g: &mut Graph, p: &[NodeId], c: GruCellParams, x: NodeId, h: NodeId) -> Result<NodeId, NumericsError> {
    g.gru_cell(x, h, p[c.w_x], p[c.w_h], p[c.b])
}

fn linear(g: &mut Graph, p: &[NodeId], l: LinearParams, x: NodeId) -> Result<NodeId, NumericsError> {
    g.linear(x, p[l.w], p[l.b])
}

/// One GRU cell applied to a single `d`-vector (`1 x d`) and state (`1 x H`).
pub fn gru_cell_step(model: &ModelParams, cell: GruCellParams, x: &Tensor, h_prev: &Tensor) -> Result<Tensor, ModelError> {
    let mut g = Graph::new();
    let p: Vec<NodeId> = [cell.w_x, cell.w_h, cell.b].iter().map(|&i| g.constant(model.tensors[i].clone())).collect();
    let x = g.constant(x.clone());
    let h = g.constant(h_prev.clone());
    let out = g.gru_cell(x, h, p[0], p[1], p[2])?;
    Ok(g.value(out).clone())
}

/// Encodes a batch given as one `B x d` node per time step. Returns `B x z`.
pub fn encode_graph(g: &mut Graph, model: &ModelParams, p: &[NodeId], steps: &[NodeId]) -> Result<NodeId, ModelError> {
    let c = model.config;
    if steps.is_empty() {
        return Err(ModelError::Config("cannot encode an empty sequence".into()));
    }
    let batch = g.value(steps[0]).rows();
    let zero = g.constant(Tensor::zeros(&[batch, c.hidden]));
    let mut inputs: Vec<NodeId> = steps.to_vec();
    let mut finals = (zero, zero);
    for (l, [fwd, bwd]) in model.encoder.layers.iter().enumerate() {
        let last = l + 1 == model.encoder.layers.len();
        let len = inputs.len();
        let mut out_f = Vec::with_capacity(len);
        let mut h = zero;
        for &x in &inputs {
            h = gru(g, p, *fwd, x, h)?;
            out_f.push(h);
        }
        let mut out_b = vec![zero; len];
        let mut hb = zero;
        for t in (0..len).rev() {
            hb = gru(g, p, *bwd, inputs[t], hb)?;
            out_b[t] = hb;
        }
        if last {
            // final states after reading the whole sequence in each direction
            finals = (h, hb);
        } else {
            inputs = (0..len).map(|t| g.concat(&[out_f[t], out_b[t]], 1)).collect::<Result<_, _>>()?;
        }
    }
    let both = g.concat(&[finals.0, finals.1], 1)?;
    Ok(linear(g, p, model.encoder.bottleneck, both)?)
}

fn run_decoder(
    g: &mut Graph,
    model: &ModelParams,
    p: &[NodeId],
    stack: &DecoderStack,
    context: NodeId,
    steps: usize,
) -> Result<Vec<NodeId>, NumericsError> {
    let c = model.config;
    let batch = g.value(context).rows();
    let mut hidden: Vec<NodeId> =
        (0..c.layers).map(|l| g.slice(context, 1, l * c.hidden, c.hidden)).collect::<Result<_, _>>()?;
    let mut input = g.constant(Tensor::zeros(&[batch, c.input_dim]));
    let mut outputs = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut x = input;
        for (l, cell) in stack.cells.iter().enumerate() {
            hidden[l] = gru(g, p, *cell, x, hidden[l])?;
            x = hidden[l];
        }
        let y = linear(g, p, stack.output, x)?;
        outputs.push(y);
        input = y;
    }
    Ok(outputs)
}

/// Decodes `B x z` embeddings into `steps` outputs (`B x d` each) per decoder:
/// `(reconstruction, future)`.
pub fn decode_graph(
    g: &mut Graph,
    model: &ModelParams,
    p: &[NodeId],
    z: NodeId,
    steps: usize,
) -> Result<(Vec<NodeId>, Vec<NodeId>), ModelError> {
    let context = linear(g, p, model.decoders.back_projection, z)?;
    let rec = run_decoder(g, model, p, &model.decoders.reconstruction, context, steps)?;
    let fut = run_decoder(g, model, p, &model.decoders.future, context, steps)?;
    Ok((rec, fut))
}

/// Per-time-step `B x d` tensors for the selected rows of `[L x d]` sequences.
pub fn time_major(seqs: &[&Tensor]) -> Vec<Tensor> {
    let (len, d) = seqs[0].dims2();
    (0..len)
        .map(|t| {
            let mut data = Vec::with_capacity(seqs.len() * d);
            for s in seqs {
                data.extend_from_slice(s.row(t));
            }
            Tensor::from_parts(vec![seqs.len(), d], data)
        })
        .collect()
}

/// Stacks per-step `B x d` outputs back into one `L x d` tensor per batch row.
pub fn batch_major(steps: &[Tensor]) -> Vec<Tensor> {
    let (batch, d) = steps[0].dims2();
    (0..batch)
        .map(|b| {
            let mut data = Vec::with_capacity(steps.len() * d);
            for s in steps {
                data.extend_from_slice(s.row(b));
            }
            Tensor::from_parts(vec![steps.len(), d], data)
        })
        .collect()
}

/// Mean squared error per element between step outputs and targets, as a scalar node.
fn sequence_mse(g: &mut Graph, outputs: &[NodeId], targets: &[Tensor]) -> Result<NodeId, NumericsError> {
    let mut total: Option<NodeId> = None;
    let mut count = 0;
    for (&y, target) in outputs.iter().zip(targets) {
        count += target.len();
        let t = g.constant(target.clone());
        let diff = g.sub(y, t)?;
        let sq = g.square(diff)?;
        let s = g.sum(sq)?;
        total = Some(match total {
            Some(acc) => g.add(acc, s)?,
            None => s,
        });
    }
    g.scale(total.expect("at least one step"), 1.0 / count as f64)
}

/// Nodes of one batch's autoencoder forward pass.
pub struct AutoencoderPass {
    pub embedding: NodeId,
    pub rec_loss: NodeId,
    pub fut_loss: NodeId,
    /// `rec_loss + fut_loss`.
    pub loss: NodeId,
}

/// Records the full autoencoder loss for `batch`.
pub fn autoencoder_pass(
    g: &mut Graph,
    model: &ModelParams,
    p: &[NodeId],
    batch: &[&TaskTriple],
) -> Result<AutoencoderPass, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::Config("empty batch".into()));
    }
    let inputs: Vec<&Tensor> = batch.iter().map(|t| &t.input).collect();
    if inputs[0].cols() != model.config.input_dim {
        return Err(ModelError::Config(format!(
            "inputs have {} channels, model expects {}",
            inputs[0].cols(),
            model.config.input_dim
        )));
    }
    let steps: Vec<NodeId> = time_major(&inputs).into_iter().map(|t| g.constant(t)).collect();
    let embedding = encode_graph(g, model, p, &steps)?;
    let (rec, fut) = decode_graph(g, model, p, embedding, steps.len())?;
    let rec_t = time_major(&batch.iter().map(|t| &t.rec_target).collect::<Vec<_>>());
    let fut_t = time_major(&batch.iter().map(|t| &t.fut_target).collect::<Vec<_>>());
    let rec_loss = sequence_mse(g, &rec, &rec_t)?;
    let fut_loss = sequence_mse(g, &fut, &fut_t)?;
    let loss = g.add(rec_loss, fut_loss)?;
    Ok(AutoencoderPass { embedding, rec_loss, fut_loss, loss })
}

/// Batch-mean autoencoder loss, without gradients.
pub fn autoencoder_loss(batch: &[&TaskTriple], model: &ModelParams) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    let pass = autoencoder_pass(&mut g, model, &p, batch).map_err(|e| match e {
        ModelError::Numerics(NumericsError::NonFinite { .. }) => ModelError::NonFiniteLoss { batch: 0 },
        other => other,
    })?;
    Ok(g.value(pass.loss).item())
}

/// Embedding of one `(T/2) x d` sequence.
pub fn encode(x: &Tensor, model: &ModelParams) -> Result<Tensor, ModelError> {
    if x.rows() == 0 || x.is_empty() {
        return Err(ModelError::Config("cannot encode an empty sequence".into()));
    }
    let out = encode_all(&[x], model, 1)?;
    Ok(Tensor::from_parts(vec![out.cols()], out.into_data()))
}

/// Reconstruction and future sequences decoded from one embedding.
pub fn decode(z: &Tensor, model: &ModelParams, steps: usize) -> Result<(Tensor, Tensor), ModelError> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    let zn = g.constant(Tensor::from_parts(vec![1, z.len()], z.data().to_vec()));
    if z.len() != model.config.embedding_dim {
        return Err(ModelError::Config(format!("embedding has {} dims, model uses {}", z.len(), model.config.embedding_dim)));
    }
    let (rec, fut) = decode_graph(&mut g, model, &p, zn, steps)?;
    let gather = |ids: &[NodeId]| {
        let steps: Vec<Tensor> = ids.iter().map(|&i| g.value(i).clone()).collect();
        batch_major(&steps).remove(0)
    };
    Ok((gather(&rec), gather(&fut)))
}

/// Embeddings (`n x z`) of many sequences, encoded in chunks of `chunk`.
///
/// Chunks are independent graphs, so the result does not depend on the
/// thread count.
pub fn encode_all(seqs: &[&Tensor], model: &ModelParams, chunk: usize) -> Result<Tensor, ModelError> {
    let z = model.config.embedding_dim;
    let parts: Vec<Vec<f64>> = seqs
        .par_chunks(chunk.max(1))
        .map(|part| {
            let mut g = Graph::new();
            let p = model.bind(&mut g, false);
            let steps: Vec<NodeId> = time_major(part).into_iter().map(|t| g.constant(t)).collect();
            let emb = encode_graph(&mut g, model, &p, &steps)?;
            Ok(g.value(emb).data().to_vec())
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(Tensor::from_parts(vec![seqs.len(), z], parts.concat()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 256, adam: AdamConfig::default() }
    }
}

/// Per-epoch, dataset-weighted mean losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub rec_loss: f64,
    pub fut_loss: f64,
    pub learning_rate: f64,
}

/// Seeded epoch shuffles shared by pretraining and refinement.
pub(crate) struct BatchOrder {
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl BatchOrder {
    pub(crate) fn new(n: usize, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), order: (0..n).collect() }
    }

    pub(crate) fn shuffle(&mut self) -> &[usize] {
        self.order.shuffle(&mut self.rng);
        &self.order
    }
}

/// Minimizes the autoencoder loss with Adam over shuffled mini-batches.
///
/// `on_epoch` sees each finished epoch.
pub fn pretrain(
    tasks: &[TaskTriple],
    init: ModelParams,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&PretrainEpoch),
) -> Result<(ModelParams, Vec<PretrainEpoch>), ModelError> {
    if tasks.is_empty() {
        return Err(ModelError::Config("no training segments".into()));
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::Config("batch_size must be positive".into()));
    }
    let mut model = init;
    let mut adam = Adam::new(cfg.adam, model.tensors());
    let mut batches = BatchOrder::new(tasks.len(), seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = batches.shuffle().to_vec();
        let (mut sum, mut rec_sum, mut fut_sum) = (0.0, 0.0, 0.0);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = |e: ModelError| ModelError::Diverged { epoch, batch: b, source: Box::new(e) };
            let batch: Vec<&TaskTriple> = idx.iter().map(|&i| &tasks[i]).collect();
            let mut g = Graph::new();
            let p = model.bind(&mut g, true);
            let pass = autoencoder_pass(&mut g, &model, &p, &batch).map_err(diverged)?;
            g.backward(pass.loss).map_err(|e| diverged(e.into()))?;
            let grads: Vec<Option<Tensor>> = p.iter().map(|&id| g.grad(id).ok()).collect();
            let w = idx.len() as f64;
            sum += g.value(pass.loss).item() * w;
            rec_sum += g.value(pass.rec_loss).item() * w;
            fut_sum += g.value(pass.fut_loss).item() * w;
            drop(g);
            let mut params: Vec<&mut Tensor> = model.tensors.iter_mut().collect();
            adam.update(&mut params, &grads, epoch).map_err(|e| diverged(e.into()))?;
        }
        let n = tasks.len() as f64;
        let record = PretrainEpoch {
            epoch: epoch + 1,
            loss: sum / n,
            rec_loss: rec_sum / n,
            fut_loss: fut_sum / n,
            learning_rate: cfg.adam.schedule.rate(epoch),
        };
        log::info!("pretrain epoch {} loss {:.6}", record.epoch, record.loss);
        on_epoch(&record);
        history.push(record);
    }
    Ok((model, history))
}
