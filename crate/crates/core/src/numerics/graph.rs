//! Define-by-run reverse-mode autodiff tape.
//!
//! Every primitive evaluates eagerly when it is recorded, so node order is a
//! topological order by construction. `backward` walks the nodes in exact
//! reverse order.

use super::tensor::{gemm, Tensor};
use super::NumericsError;

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Square(NodeId),
    Recip(NodeId),
    Sum(NodeId),
    SumRows(NodeId),
    SumCols(NodeId),
    Concat { inputs: Vec<NodeId>, axis: usize },
    Slice { input: NodeId, axis: usize, start: usize },
    Broadcast(NodeId),
    Transpose(NodeId),
    GruCell(Box<GruSaved>),
}

#[derive(Debug)]
struct GruSaved {
    x: NodeId,
    h: NodeId,
    w_x: NodeId,
    w_h: NodeId,
    b: NodeId,
    // update gate, reset gate, candidate; empty when no input needs a gradient
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Build one per batch.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Tensor>>>,
}

fn shape_err(op: &'static str, detail: String) -> NumericsError {
    NumericsError::Shape { op, detail }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.grads = None;
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn check(&self, id: NodeId, op: &'static str) -> Result<(), NumericsError> {
        if id.0 >= self.nodes.len() {
            return Err(NumericsError::State(format!("{op}: node {} does not exist", id.0)));
        }
        Ok(())
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[NodeId]) -> Result<NodeId, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.grads = None;
        self.nodes.push(Node { value, op, requires_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn rank2(&self, id: NodeId, op: &'static str) -> Result<(usize, usize), NumericsError> {
        self.check(id, op)?;
        let v = &self.nodes[id.0].value;
        if v.rank() > 2 {
            return Err(shape_err(op, format!("expected rank <= 2, got {:?}", v.shape())));
        }
        Ok(v.dims2())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (m, k) = self.rank2(a, "matmul")?;
        let (k2, n) = self.rank2(b, "matmul")?;
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            &mut out,
            n as isize,
            0.0,
        );
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, NumericsError> {
        self.check(a, name)?;
        self.check(b, name)?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        self.push(name, out, op, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.zip("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, name: &'static str, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> Result<NodeId, NumericsError> {
        self.check(a, name)?;
        let out = self.value(a).map(f);
        self.push(name, out, op, &[a])
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, NumericsError> {
        self.unary("scale", a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId, NumericsError> {
        self.unary("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    pub fn recip(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.unary("recip", a, |x| 1.0 / x, Op::Recip(a))
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.check(a, "sum")?;
        let s: f64 = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Mean of all elements, as a rank-0 scalar.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Row sums of an `m x n` matrix, shape `m x 1`.
    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let (m, n) = self.rank2(a, "sum_rows")?;
        let v = self.value(a).data();
        let out: Vec<f64> = (0..m).map(|i| v[i * n..(i + 1) * n].iter().sum()).collect();
        self.push("sum_rows", Tensor::from_parts(vec![m, 1], out), Op::SumRows(a), &[a])
    }

    /// Column sums of an `m x n` matrix, shape `1 x n`.
    pub fn sum_cols(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let (m, n) = self.rank2(a, "sum_cols")?;
        let v = self.value(a).data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, x) in out.iter_mut().zip(&v[i * n..(i + 1) * n]) {
                *o += x;
            }
        }
        self.push("sum_cols", Tensor::from_parts(vec![1, n], out), Op::SumCols(a), &[a])
    }

    /// Concatenates rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId, NumericsError> {
        if inputs.is_empty() || axis > 1 {
            return Err(shape_err("concat", format!("{} inputs, axis {axis}", inputs.len())));
        }
        let dims: Vec<(usize, usize)> =
            inputs.iter().map(|&i| self.rank2(i, "concat")).collect::<Result<_, _>>()?;
        let out = if axis == 0 {
            let c = dims[0].1;
            if dims.iter().any(|d| d.1 != c) {
                return Err(shape_err("concat", format!("column mismatch {dims:?}")));
            }
            let mut data = Vec::with_capacity(dims.iter().map(|d| d.0 * c).sum());
            for &i in inputs {
                data.extend_from_slice(self.value(i).data());
            }
            Tensor::from_parts(vec![data.len() / c, c], data)
        } else {
            let r = dims[0].0;
            if dims.iter().any(|d| d.0 != r) {
                return Err(shape_err("concat", format!("row mismatch {dims:?}")));
            }
            let total: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(r * total);
            for row in 0..r {
                for &i in inputs {
                    data.extend_from_slice(self.value(i).row(row));
                }
            }
            Tensor::from_parts(vec![r, total], data)
        };
        self.push("concat", out, Op::Concat { inputs: inputs.to_vec(), axis }, inputs)
    }

    /// `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId, NumericsError> {
        let (m, n) = self.rank2(a, "slice")?;
        let extent = if axis == 0 { m } else { n };
        if axis > 1 || len == 0 || start + len > extent {
            return Err(shape_err("slice", format!("[{start}, {}) on axis {axis} of {m}x{n}", start + len)));
        }
        let v = self.value(a);
        let out = if axis == 0 {
            Tensor::from_parts(vec![len, n], v.data()[start * n..(start + len) * n].to_vec())
        } else {
            let mut data = Vec::with_capacity(m * len);
            for row in 0..m {
                data.extend_from_slice(&v.row(row)[start..start + len]);
            }
            Tensor::from_parts(vec![m, len], data)
        };
        self.push("slice", out, Op::Slice { input: a, axis, start }, &[a])
    }

    /// Expands extents of size 1 to `rows x cols`. Scalars and vectors are
    /// treated as `1 x 1` and `1 x n`.
    pub fn broadcast(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId, NumericsError> {
        let (m, n) = self.rank2(a, "broadcast")?;
        if (m != rows && m != 1) || (n != cols && n != 1) {
            return Err(shape_err("broadcast", format!("{m}x{n} -> {rows}x{cols}")));
        }
        let v = self.value(a).data();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let src = if m == 1 { 0 } else { i };
            if n == 1 {
                data.extend(std::iter::repeat_n(v[src], cols));
            } else {
                data.extend_from_slice(&v[src * n..(src + 1) * n]);
            }
        }
        self.push("broadcast", Tensor::from_parts(vec![rows, cols], data), Op::Broadcast(a), &[a])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.rank2(a, "transpose")?;
        let out = self.value(a).transpose();
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    /// `x * w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let xw = self.matmul(x, w)?;
        let (rows, cols) = self.value(xw).dims2();
        let bb = self.broadcast(b, rows, cols)?;
        self.add(xw, bb)
    }

    /// One GRU step for a batch.
    ///
    /// Shapes: `x: B x I`, `h: B x H`, `w_x: I x 3H`, `w_h: H x 3H`,
    /// `b: 1 x 3H`, gate blocks ordered `[update | reset | candidate]`.
    ///
    /// ```text
    /// z  = sigmoid(x W_z + h U_z + b_z)
    /// r  = sigmoid(x W_r + h U_r + b_r)
    /// n  = tanh(x W_n + (r * h) U_n + b_n)
    /// h' = (1 - z) * h + z * n
    /// ```
    pub fn gru_cell(
        &mut self,
        x: NodeId,
        h: NodeId,
        w_x: NodeId,
        w_h: NodeId,
        b: NodeId,
    ) -> Result<NodeId, NumericsError> {
        let (bsz, in_dim) = self.rank2(x, "gru_cell")?;
        let (hb, hid) = self.rank2(h, "gru_cell")?;
        let wx_dims = self.rank2(w_x, "gru_cell")?;
        let wh_dims = self.rank2(w_h, "gru_cell")?;
        let b_dims = self.rank2(b, "gru_cell")?;
        let g = 3 * hid;
        if hb != bsz || wx_dims != (in_dim, g) || wh_dims != (hid, g) || b_dims != (1, g) {
            return Err(shape_err(
                "gru_cell",
                format!(
                    "x {:?}, h {:?}, w_x {:?}, w_h {:?}, b {:?}",
                    self.value(x).shape(),
                    self.value(h).shape(),
                    self.value(w_x).shape(),
                    self.value(w_h).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let hv = self.value(h).data();
        let whv = self.value(w_h).data();
        let bv = self.value(b).data();

        let mut gx = vec![0.0; bsz * g];
        for row in gx.chunks_exact_mut(g) {
            row.copy_from_slice(bv);
        }
        gemm(bsz, in_dim, g, self.value(x).data(), in_dim as isize, 1, self.value(w_x).data(), g as isize, 1, &mut gx, g as isize, 1.0);
        // h U_zr into the first 2H columns of gx
        gemm(bsz, hid, 2 * hid, hv, hid as isize, 1, whv, g as isize, 1, &mut gx, g as isize, 1.0);

        let mut z = vec![0.0; bsz * hid];
        let mut r = vec![0.0; bsz * hid];
        let mut rh = vec![0.0; bsz * hid];
        for i in 0..bsz {
            let gr = &gx[i * g..(i + 1) * g];
            for j in 0..hid {
                let k = i * hid + j;
                z[k] = sigmoid(gr[j]);
                r[k] = sigmoid(gr[hid + j]);
                rh[k] = r[k] * hv[k];
            }
        }
        let mut ghn = vec![0.0; bsz * hid];
        gemm(bsz, hid, hid, &rh, hid as isize, 1, &whv[2 * hid..], g as isize, 1, &mut ghn, hid as isize, 0.0);
        let mut n = vec![0.0; bsz * hid];
        let mut out = vec![0.0; bsz * hid];
        for i in 0..bsz {
            for j in 0..hid {
                let k = i * hid + j;
                n[k] = (gx[i * g + 2 * hid + j] + ghn[k]).tanh();
                out[k] = hv[k] + z[k] * (n[k] - hv[k]);
            }
        }
        let inputs = [x, h, w_x, w_h, b];
        let keep = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let saved = if keep {
            GruSaved { x, h, w_x, w_h, b, z, r, n }
        } else {
            GruSaved { x, h, w_x, w_h, b, z: Vec::new(), r: Vec::new(), n: Vec::new() }
        };
        self.push("gru_cell", Tensor::from_parts(vec![bsz, hid], out), Op::GruCell(Box::new(saved)), &inputs)
    }

    /// Reverse pass from a one-element `loss`. Populates gradients for every
    /// node that requires one.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), NumericsError> {
        self.check(loss, "backward")?;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NumericsError::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let loss_shape = self.nodes[loss.0].value.shape().to_vec();
        grads[loss.0] = Some(Tensor::filled(&loss_shape, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let upstream = match (&node.op, grads[idx].is_some()) {
                (_, false) => continue,
                (Op::Leaf, true) => continue,
                (_, true) => grads[idx].take().expect("checked"),
            };
            self.backprop_node(idx, &upstream, &mut grads)?;
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last `backward` loss with respect to `id`.
    ///
    /// Nodes that require a gradient but were not reached get zeros.
    pub fn grad(&self, id: NodeId) -> Result<Tensor, NumericsError> {
        self.check(id, "grad")?;
        let grads = self
            .grads
            .as_ref()
            .ok_or_else(|| NumericsError::State("grad requested before backward".into()))?;
        let node = &self.nodes[id.0];
        if !node.requires_grad {
            return Err(NumericsError::State(format!("node {} does not require a gradient", id.0)));
        }
        Ok(grads[id.0].clone().unwrap_or_else(|| Tensor::zeros(node.value.shape())))
    }

    fn backprop_node(&self, idx: usize, up: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), NumericsError> {
        let nodes = &self.nodes;
        let out = &nodes[idx].value;
        let wants = |id: NodeId| nodes[id.0].requires_grad;
        let val = |id: NodeId| &nodes[id.0].value;

        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2();
                let n = val(*b).cols();
                if wants(*a) {
                    // dA = dC B^T
                    let ga = acc(grads, *a, val(*a));
                    gemm(m, n, k, up.data(), n as isize, 1, val(*b).data(), 1, n as isize, ga, k as isize, 1.0);
                }
                if wants(*b) {
                    // dB = A^T dC
                    let gb = acc(grads, *b, val(*b));
                    gemm(k, m, n, val(*a).data(), 1, k as isize, up.data(), n as isize, 1, gb, n as isize, 1.0);
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if wants(id) {
                        axpy(acc(grads, id, val(id)), up.data(), 1.0);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    axpy(acc(grads, *a, val(*a)), up.data(), 1.0);
                }
                if wants(*b) {
                    axpy(acc(grads, *b, val(*b)), up.data(), -1.0);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let other = val(*b).data();
                    for ((g, u), o) in acc(grads, *a, val(*a)).iter_mut().zip(up.data()).zip(other) {
                        *g += u * o;
                    }
                }
                if wants(*b) {
                    let other = val(*a).data();
                    for ((g, u), o) in acc(grads, *b, val(*b)).iter_mut().zip(up.data()).zip(other) {
                        *g += u * o;
                    }
                }
            }
            Op::Div(a, b) => {
                let bv = val(*b).data();
                if wants(*a) {
                    for ((g, u), d) in acc(grads, *a, val(*a)).iter_mut().zip(up.data()).zip(bv) {
                        *g += u / d;
                    }
                }
                if wants(*b) {
                    // d(a/b)/db = -(a/b)/b
                    for (((g, u), q), d) in acc(grads, *b, val(*b)).iter_mut().zip(up.data()).zip(out.data()).zip(bv) {
                        *g -= u * q / d;
                    }
                }
            }
            Op::Scale(a, f) => {
                if wants(*a) {
                    axpy(acc(grads, *a, val(*a)), up.data(), *f);
                }
            }
            Op::AddScalar(a) => {
                if wants(*a) {
                    axpy(acc(grads, *a, val(*a)), up.data(), 1.0);
                }
            }
            Op::Sigmoid(a) => elementwise(grads, *a, val(*a), up, out.data(), |_, y| y * (1.0 - y)),
            Op::Tanh(a) => elementwise(grads, *a, val(*a), up, out.data(), |_, y| 1.0 - y * y),
            Op::Log(a) => elementwise(grads, *a, val(*a), up, out.data(), |x, _| 1.0 / x),
            Op::Exp(a) => elementwise(grads, *a, val(*a), up, out.data(), |_, y| y),
            Op::Square(a) => elementwise(grads, *a, val(*a), up, out.data(), |x, _| 2.0 * x),
            Op::Recip(a) => elementwise(grads, *a, val(*a), up, out.data(), |_, y| -y * y),
            Op::Sum(a) => {
                if wants(*a) {
                    let u = up.item();
                    for g in acc(grads, *a, val(*a)).iter_mut() {
                        *g += u;
                    }
                }
            }
            Op::SumRows(a) => {
                if wants(*a) {
                    let n = val(*a).cols();
                    let ga = acc(grads, *a, val(*a));
                    for (row, u) in ga.chunks_exact_mut(n).zip(up.data()) {
                        row.iter_mut().for_each(|g| *g += u);
                    }
                }
            }
            Op::SumCols(a) => {
                if wants(*a) {
                    let n = val(*a).cols();
                    let ga = acc(grads, *a, val(*a));
                    for row in ga.chunks_exact_mut(n) {
                        axpy(row, up.data(), 1.0);
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let cols = out.cols();
                let mut offset = 0;
                for &id in inputs {
                    let (r, c) = val(id).dims2();
                    if wants(id) {
                        let g = acc(grads, id, val(id));
                        if *axis == 0 {
                            axpy(g, &up.data()[offset * cols..(offset + r) * cols], 1.0);
                        } else {
                            for row in 0..r {
                                let src = &up.data()[row * cols + offset..row * cols + offset + c];
                                axpy(&mut g[row * c..(row + 1) * c], src, 1.0);
                            }
                        }
                    }
                    offset += if *axis == 0 { r } else { c };
                }
            }
            Op::Slice { input, axis, start } => {
                if wants(*input) {
                    let (_, n) = val(*input).dims2();
                    let (r, c) = out.dims2();
                    let g = acc(grads, *input, val(*input));
                    if *axis == 0 {
                        axpy(&mut g[start * n..(start + r) * n], up.data(), 1.0);
                    } else {
                        for row in 0..r {
                            axpy(&mut g[row * n + start..row * n + start + c], &up.data()[row * c..(row + 1) * c], 1.0);
                        }
                    }
                }
            }
            Op::Broadcast(a) => {
                if wants(*a) {
                    let (m, n) = val(*a).dims2();
                    let (rows, cols) = out.dims2();
                    let g = acc(grads, *a, val(*a));
                    for i in 0..rows {
                        let src = if m == 1 { 0 } else { i };
                        let urow = &up.data()[i * cols..(i + 1) * cols];
                        if n == 1 {
                            g[src] += urow.iter().sum::<f64>();
                        } else {
                            axpy(&mut g[src * n..(src + 1) * n], urow, 1.0);
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if wants(*a) {
                    let t = up.transpose();
                    axpy(acc(grads, *a, val(*a)), t.data(), 1.0);
                }
            }
            Op::GruCell(s) => self.backprop_gru(s, up, grads)?,
        }
        Ok(())
    }

    fn backprop_gru(&self, s: &GruSaved, up: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), NumericsError> {
        if s.z.is_empty() {
            return Err(NumericsError::State("gru_cell intermediates were not saved".into()));
        }
        let nodes = &self.nodes;
        let val = |id: NodeId| &nodes[id.0].value;
        let wants = |id: NodeId| nodes[id.0].requires_grad;
        let (bsz, in_dim) = val(s.x).dims2();
        let hid = val(s.h).cols();
        let g = 3 * hid;
        let hv = val(s.h).data();
        let whv = val(s.w_h).data();
        let u = up.data();

        // pre-activation gradients [update | reset | candidate]
        let mut da = vec![0.0; bsz * g];
        let mut dh = vec![0.0; bsz * hid];
        let mut rh = vec![0.0; bsz * hid];
        for i in 0..bsz {
            for j in 0..hid {
                let k = i * hid + j;
                let (z, n) = (s.z[k], s.n[k]);
                da[i * g + j] = u[k] * (n - hv[k]) * z * (1.0 - z);
                da[i * g + 2 * hid + j] = u[k] * z * (1.0 - n * n);
                dh[k] = u[k] * (1.0 - z);
                rh[k] = s.r[k] * hv[k];
            }
        }
        // d(r*h) = da_n U_n^T
        let mut drh = vec![0.0; bsz * hid];
        gemm(bsz, hid, hid, &da[2 * hid..], g as isize, 1, &whv[2 * hid..], 1, g as isize, &mut drh, hid as isize, 0.0);
        for i in 0..bsz {
            for j in 0..hid {
                let k = i * hid + j;
                let r = s.r[k];
                da[i * g + hid + j] = drh[k] * hv[k] * r * (1.0 - r);
                dh[k] += drh[k] * r;
            }
        }
        if wants(s.w_h) {
            let gwh = acc(grads, s.w_h, val(s.w_h));
            // U_zr += h^T da_zr ; U_n += (r*h)^T da_n
            gemm(hid, bsz, 2 * hid, hv, 1, hid as isize, &da, g as isize, 1, gwh, g as isize, 1.0);
            gemm(hid, bsz, hid, &rh, 1, hid as isize, &da[2 * hid..], g as isize, 1, &mut gwh[2 * hid..], g as isize, 1.0);
        }
        if wants(s.h) {
            // dh += da_zr U_zr^T
            gemm(bsz, 2 * hid, hid, &da, g as isize, 1, whv, 1, g as isize, &mut dh, hid as isize, 1.0);
            axpy(acc(grads, s.h, val(s.h)), &dh, 1.0);
        }
        if wants(s.w_x) {
            let gwx = acc(grads, s.w_x, val(s.w_x));
            gemm(in_dim, bsz, g, val(s.x).data(), 1, in_dim as isize, &da, g as isize, 1, gwx, g as isize, 1.0);
        }
        if wants(s.b) {
            let gb = acc(grads, s.b, val(s.b));
            for row in da.chunks_exact(g) {
                axpy(gb, row, 1.0);
            }
        }
        if wants(s.x) {
            let gx = acc(grads, s.x, val(s.x));
            gemm(bsz, g, in_dim, &da, g as isize, 1, val(s.w_x).data(), 1, g as isize, gx, in_dim as isize, 1.0);
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn acc<'a>(grads: &'a mut [Option<Tensor>], id: NodeId, like: &Tensor) -> &'a mut [f64] {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(like.shape())).data_mut()
}

fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

/// Accumulates `up * f(x, y)` for an elementwise unary op with input `x` and output `y`.
fn elementwise(
    grads: &mut [Option<Tensor>],
    a: NodeId,
    input: &Tensor,
    up: &Tensor,
    out: &[f64],
    f: impl Fn(f64, f64) -> f64,
) {
    let g = acc(grads, a, input);
    for (((g, u), x), y) in g.iter_mut().zip(up.data()).zip(input.data()).zip(out) {
        *g += u * f(*x, *y);
    }
}
