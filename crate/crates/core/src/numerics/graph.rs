//! Reverse-mode differentiation over a fixed set of batched primitives.
//!
//! A [`Graph`] is built once per forward pass: leaves borrow parameter
//! tensors, every primitive stores its output (plus any selection mask it
//! needs) and [`Graph::backward`] walks the nodes in reverse creation order.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::numerics::ops::{self, gemm_nn, gemm_nt, gemm_tn, TruncationScope};
use crate::numerics::{Rng, Tensor};

/// Lower clip applied to probabilities before taking logs.
pub const PROB_CLIP: f64 = 1e-7;

/// Names of every primitive the graph knows how to differentiate.
pub const PRIMITIVES: &[&str] = &[
    "matmul",
    "reshape",
    "add_bias",
    "add",
    "scale",
    "sigmoid",
    "relu",
    "dropout",
    "softmax_rows",
    "topk_truncate",
    "batch_qkt",
    "batch_matmul",
    "gather_rows",
    "gate",
    "cross",
    "fm",
    "concat",
    "bce",
    "sum",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate backward-pass defects, used to prove the gradient checker
/// catches them.
#[derive(Clone, Copy, Debug, Default)]
pub struct Faults {
    /// Negate the fusion-gate logit gradient.
    pub flip_gate_grad: bool,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Reshape(NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Relu(NodeId),
    Dropout(NodeId, Vec<f64>),
    SoftmaxRows(NodeId),
    TopK(NodeId, Vec<bool>),
    BatchQkt(NodeId, NodeId),
    BatchMatMul(NodeId, NodeId),
    Gather(NodeId, Vec<usize>),
    Gate(NodeId, NodeId, NodeId),
    Cross {
        x0: NodeId,
        xl: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Fm(NodeId),
    Concat(NodeId, NodeId),
    Bce(NodeId, Vec<f64>),
    Sum(NodeId),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    faults: Faults,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            faults: Faults::default(),
        }
    }

    pub fn with_faults(faults: Faults) -> Self {
        Self {
            nodes: Vec::new(),
            faults,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Selection mask recorded by a `topk_truncate` node.
    pub fn kept_mask(&self, id: NodeId) -> Option<&[bool]> {
        match &self.nodes[id.0].op {
            Op::TopK(_, mask) => Some(mask),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf borrowing `t`.
    pub fn param(&mut self, t: &'a Tensor) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf owning `t`.
    pub fn param_owned(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Applies an attribute-free primitive by name.
    pub fn apply(&mut self, name: &str, inputs: &[NodeId]) -> Result<NodeId> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::Parameter(format!(
                    "`{name}` takes {n} inputs, got {}",
                    inputs.len()
                )))
            }
        };
        match name {
            "matmul" => arity(2).and_then(|_| self.matmul(inputs[0], inputs[1])),
            "add_bias" => arity(2).and_then(|_| self.add_bias(inputs[0], inputs[1])),
            "add" => arity(2).and_then(|_| self.add(inputs[0], inputs[1])),
            "sigmoid" => arity(1).map(|_| self.sigmoid(inputs[0])),
            "relu" => arity(1).map(|_| self.relu(inputs[0])),
            "softmax_rows" => arity(1).map(|_| self.softmax_rows(inputs[0])),
            "batch_qkt" => arity(2).and_then(|_| self.batch_qkt(inputs[0], inputs[1])),
            "batch_matmul" => arity(2).and_then(|_| self.batch_matmul(inputs[0], inputs[1])),
            "gate" => arity(3).and_then(|_| self.gate(inputs[0], inputs[1], inputs[2])),
            "cross" => {
                arity(4).and_then(|_| self.cross(inputs[0], inputs[1], inputs[2], inputs[3]))
            }
            "fm" => arity(1).and_then(|_| self.fm(inputs[0])),
            "concat" => arity(2).and_then(|_| self.concat(inputs[0], inputs[1])),
            "sum" => arity(1).map(|_| self.sum(inputs[0])),
            other => Err(Error::UnregisteredOp(other.to_string())),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// `x[m×p] + bias[p]` broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let p = xv.last_dim();
        if bv.len() != p {
            return Err(dim_err("add_bias", xv, bv));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(p) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = ops::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu(x), &[x])
    }

    /// Inverted dropout; returns `x` itself when nothing is dropped.
    pub fn dropout(&mut self, x: NodeId, rate: f64, rng: &mut Rng, training: bool) -> Result<NodeId> {
        let (out, mask) = ops::dropout(self.value(x), rate, rng, training)?;
        Ok(match mask {
            Some(mask) => self.push(out, Op::Dropout(x, mask), &[x]),
            None => x,
        })
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let out = ops::softmax_rows(self.value(x));
        self.push(out, Op::SoftmaxRows(x), &[x])
    }

    pub fn topk_truncate(&mut self, w: NodeId, k: usize, scope: TruncationScope) -> Result<NodeId> {
        let (out, mask) = ops::topk_truncate(self.value(w), k, scope)?;
        Ok(self.push(out, Op::TopK(w, mask), &[w]))
    }

    /// Per-batch `Q·Kᵀ`: `[b,n,d] × [b,n,d] → [b,n,n]`.
    pub fn batch_qkt(&mut self, q: NodeId, k: NodeId) -> Result<NodeId> {
        let (qv, kv) = (self.value(q), self.value(k));
        let &[b, n, d] = qv.shape() else {
            return Err(dim_err("batch_qkt", qv, kv));
        };
        if kv.shape() != qv.shape() {
            return Err(dim_err("batch_qkt", qv, kv));
        }
        let mut out = vec![0.0; b * n * n];
        for i in 0..b {
            let qs = &qv.data()[i * n * d..(i + 1) * n * d];
            let ks = &kv.data()[i * n * d..(i + 1) * n * d];
            let os = &mut out[i * n * n..(i + 1) * n * n];
            for r in 0..n {
                let qr = &qs[r * d..(r + 1) * d];
                for c in 0..n {
                    let kc = &ks[c * d..(c + 1) * d];
                    os[r * n + c] = qr.iter().zip(kc).map(|(x, y)| x * y).sum();
                }
            }
        }
        let out = Tensor::new(vec![b, n, n], out)?;
        Ok(self.push(out, Op::BatchQkt(q, k), &[q, k]))
    }

    /// Per-batch product: `[b,n,m] × [b,m,d] → [b,n,d]`.
    pub fn batch_matmul(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let (av, vv) = (self.value(a), self.value(v));
        let (&[b, n, m], &[b2, m2, d]) = (av.shape(), vv.shape()) else {
            return Err(dim_err("batch_matmul", av, vv));
        };
        if b != b2 || m != m2 {
            return Err(dim_err("batch_matmul", av, vv));
        }
        let mut out = vec![0.0; b * n * d];
        for i in 0..b {
            gemm_nn(
                &av.data()[i * n * m..(i + 1) * n * m],
                &vv.data()[i * m * d..(i + 1) * m * d],
                n,
                m,
                d,
                &mut out[i * n * d..(i + 1) * n * d],
            );
        }
        let out = Tensor::new(vec![b, n, d], out)?;
        Ok(self.push(out, Op::BatchMatMul(a, v), &[a, v]))
    }

    /// Gathers rows of `table[V×d]` into `[indices.len() × d]`.
    pub fn gather_rows(&mut self, table: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let tv = self.value(table);
        let (rows, d) = tv.dims2("gather_rows")?;
        let mut out = Vec::with_capacity(indices.len() * d);
        for &ix in &indices {
            if ix >= rows {
                return Err(Error::Lookup {
                    field: 0,
                    index: ix,
                    size: rows,
                });
            }
            out.extend_from_slice(tv.row_slice(ix));
        }
        let out = Tensor::new(vec![indices.len(), d], out)?;
        Ok(self.push(out, Op::Gather(table, indices), &[table]))
    }

    /// Element-wise fusion `σ(g)⊙x + (1−σ(g))⊙y` for `x, y: [b×m]`, `g: [m]`.
    pub fn gate(&mut self, x: NodeId, y: NodeId, gate: NodeId) -> Result<NodeId> {
        let (xv, yv, gv) = (self.value(x), self.value(y), self.value(gate));
        xv.check_same("gate", yv)?;
        let m = xv.last_dim();
        if gv.len() != m {
            return Err(dim_err("gate", xv, gv));
        }
        let s: Vec<f64> = gv.data().iter().map(|&g| ops::sigmoid_scalar(g)).collect();
        let mut out = Vec::with_capacity(xv.len());
        for (xr, yr) in xv.data().chunks(m).zip(yv.data().chunks(m)) {
            for j in 0..m {
                out.push(s[j] * xr[j] + (1.0 - s[j]) * yr[j]);
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(out, Op::Gate(x, y, gate), &[x, y, gate]))
    }

    /// Cross layer `x0 ⊙ (x_l · w) + bias + x_l` on `[b×m]` rows.
    pub fn cross(&mut self, x0: NodeId, xl: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x0v, xlv, wv, bv) = (
            self.value(x0),
            self.value(xl),
            self.value(weight),
            self.value(bias),
        );
        x0v.check_same("cross", xlv)?;
        let m = x0v.last_dim();
        if wv.len() != m {
            return Err(dim_err("cross", xlv, wv));
        }
        if bv.len() != m {
            return Err(dim_err("cross", xlv, bv));
        }
        let mut out = Vec::with_capacity(x0v.len());
        for (r0, rl) in x0v.data().chunks(m).zip(xlv.data().chunks(m)) {
            let s: f64 = rl.iter().zip(wv.data()).map(|(a, b)| a * b).sum();
            for j in 0..m {
                out.push(r0[j] * s + bv.data()[j] + rl[j]);
            }
        }
        let out = Tensor::new(x0v.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::Cross {
                x0,
                xl,
                weight,
                bias,
            },
            &[x0, xl, weight, bias],
        ))
    }

    /// Second-order factorisation-machine term of `[b,n,d]` embeddings,
    /// giving `[b×1]`.
    pub fn fm(&mut self, e: NodeId) -> Result<NodeId> {
        let ev = self.value(e);
        let &[b, n, d] = ev.shape() else {
            return Err(dim_err("fm", ev, ev));
        };
        let mut out = Vec::with_capacity(b);
        for inst in ev.data().chunks(n * d) {
            let mut total = 0.0;
            for k in 0..d {
                let mut sum = 0.0;
                let mut sq = 0.0;
                for i in 0..n {
                    let v = inst[i * d + k];
                    sum += v;
                    sq += v * v;
                }
                total += sum * sum - sq;
            }
            out.push(0.5 * total);
        }
        let out = Tensor::new(vec![b, 1], out)?;
        Ok(self.push(out, Op::Fm(e), &[e]))
    }

    /// Column concatenation of `[b×p]` and `[b×q]`.
    pub fn concat(&mut self, a: NodeId, c: NodeId) -> Result<NodeId> {
        let (av, cv) = (self.value(a), self.value(c));
        let (ra, p) = av.dims2("concat")?;
        let (rc, q) = cv.dims2("concat")?;
        if ra != rc {
            return Err(dim_err("concat", av, cv));
        }
        let mut out = Vec::with_capacity(ra * (p + q));
        for r in 0..ra {
            out.extend_from_slice(av.row_slice(r));
            out.extend_from_slice(cv.row_slice(r));
        }
        let out = Tensor::new(vec![ra, p + q], out)?;
        Ok(self.push(out, Op::Concat(a, c), &[a, c]))
    }

    /// Mean binary cross-entropy of probabilities against 0/1 labels, with
    /// probabilities clipped to `[PROB_CLIP, 1 − PROB_CLIP]`.
    pub fn bce(&mut self, probs: NodeId, labels: Vec<f64>) -> Result<NodeId> {
        let pv = self.value(probs);
        if pv.len() != labels.len() {
            return Err(dim_err("bce", pv, &Tensor::zeros(&[labels.len()])));
        }
        if labels.is_empty() {
            return Err(Error::Parameter("empty batch".into()));
        }
        let loss = bce_value(pv.data(), &labels);
        Ok(self.push(Tensor::scalar(loss), Op::Bce(probs, labels), &[probs]))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// Gradients of the scalar node `loss` with respect to every node that
    /// depends on a trainable leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Parameter(format!(
                "backward from non-scalar node of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[id].value;
        let needs = |n: NodeId| self.nodes[n.0].needs_grad;
        macro_rules! acc {
            ($n:expr) => {
                self.grad_slot(grads, $n)
            };
        }
        match &self.nodes[id].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let p = bv.shape()[1];
                if needs(a) {
                    gemm_nt(g.data(), bv.data(), m, p, k, acc!(a));
                }
                if needs(b) {
                    gemm_tn(av.data(), g.data(), m, k, p, acc!(b));
                }
            }
            &Op::Reshape(x) => {
                for (d, s) in acc!(x).iter_mut().zip(g.data()) {
                    *d += s;
                }
            }
            &Op::AddBias(x, b) => {
                if needs(x) {
                    for (d, s) in acc!(x).iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
                if needs(b) {
                    let p = g.last_dim();
                    let db = acc!(b);
                    for row in g.data().chunks(p) {
                        for (d, s) in db.iter_mut().zip(row) {
                            *d += s;
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                for n in [a, b] {
                    if needs(n) {
                        for (d, s) in acc!(n).iter_mut().zip(g.data()) {
                            *d += s;
                        }
                    }
                }
            }
            &Op::Scale(x, c) => {
                for (d, s) in acc!(x).iter_mut().zip(g.data()) {
                    *d += c * s;
                }
            }
            &Op::Sigmoid(x) => {
                for ((d, s), y) in acc!(x).iter_mut().zip(g.data()).zip(out.data()) {
                    *d += s * y * (1.0 - y);
                }
            }
            &Op::Relu(x) => {
                let xv = self.value(x);
                for ((d, s), v) in acc!(x).iter_mut().zip(g.data()).zip(xv.data()) {
                    if *v > 0.0 {
                        *d += s;
                    }
                }
            }
            Op::Dropout(x, mask) => {
                for ((d, s), m) in acc!(*x).iter_mut().zip(g.data()).zip(mask) {
                    *d += s * m;
                }
            }
            &Op::SoftmaxRows(x) => {
                let n = out.last_dim();
                let dx = acc!(x);
                for ((dr, gr), yr) in dx
                    .chunks_mut(n)
                    .zip(g.data().chunks(n))
                    .zip(out.data().chunks(n))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::TopK(x, mask) => {
                for ((d, s), &keep) in acc!(*x).iter_mut().zip(g.data()).zip(mask) {
                    if keep {
                        *d += s;
                    }
                }
            }
            &Op::BatchQkt(q, k) => {
                let (qv, kv) = (self.value(q), self.value(k));
                let &[b, n, d] = qv.shape() else { unreachable!() };
                for i in 0..b {
                    let gs = &g.data()[i * n * n..(i + 1) * n * n];
                    if needs(q) {
                        let ks = &kv.data()[i * n * d..(i + 1) * n * d];
                        gemm_nn(gs, ks, n, n, d, &mut acc!(q)[i * n * d..(i + 1) * n * d]);
                    }
                    if needs(k) {
                        let qs = &qv.data()[i * n * d..(i + 1) * n * d];
                        gemm_tn(gs, qs, n, n, d, &mut acc!(k)[i * n * d..(i + 1) * n * d]);
                    }
                }
            }
            &Op::BatchMatMul(a, v) => {
                let (av, vv) = (self.value(a), self.value(v));
                let &[b, n, m] = av.shape() else { unreachable!() };
                let d = vv.shape()[2];
                for i in 0..b {
                    let gs = &g.data()[i * n * d..(i + 1) * n * d];
                    if needs(a) {
                        let vs = &vv.data()[i * m * d..(i + 1) * m * d];
                        gemm_nt(gs, vs, n, d, m, &mut acc!(a)[i * n * m..(i + 1) * n * m]);
                    }
                    if needs(v) {
                        let as_ = &av.data()[i * n * m..(i + 1) * n * m];
                        gemm_tn(as_, gs, n, m, d, &mut acc!(v)[i * m * d..(i + 1) * m * d]);
                    }
                }
            }
            Op::Gather(table, indices) => {
                let d = g.last_dim();
                let dt = acc!(*table);
                for (r, &ix) in indices.iter().enumerate() {
                    for (dst, s) in dt[ix * d..(ix + 1) * d].iter_mut().zip(g.row_slice(r)) {
                        *dst += s;
                    }
                }
            }
            &Op::Gate(x, y, gate) => {
                let (xv, yv, gv) = (self.value(x), self.value(y), self.value(gate));
                let m = xv.last_dim();
                let s: Vec<f64> = gv.data().iter().map(|&v| ops::sigmoid_scalar(v)).collect();
                if needs(x) {
                    let dx = acc!(x);
                    for (dr, gr) in dx.chunks_mut(m).zip(g.data().chunks(m)) {
                        for j in 0..m {
                            dr[j] += gr[j] * s[j];
                        }
                    }
                }
                if needs(y) {
                    let dy = acc!(y);
                    for (dr, gr) in dy.chunks_mut(m).zip(g.data().chunks(m)) {
                        for j in 0..m {
                            dr[j] += gr[j] * (1.0 - s[j]);
                        }
                    }
                }
                if needs(gate) {
                    let sign = if self.faults.flip_gate_grad { -1.0 } else { 1.0 };
                    let mut dg = vec![0.0; m];
                    for ((gr, xr), yr) in g
                        .data()
                        .chunks(m)
                        .zip(xv.data().chunks(m))
                        .zip(yv.data().chunks(m))
                    {
                        for j in 0..m {
                            dg[j] += gr[j] * (xr[j] - yr[j]);
                        }
                    }
                    for (d, (v, sj)) in acc!(gate).iter_mut().zip(dg.iter().zip(&s)) {
                        *d += sign * v * sj * (1.0 - sj);
                    }
                }
            }
            &Op::Cross {
                x0,
                xl,
                weight,
                bias,
            } => {
                let (x0v, xlv, wv) = (self.value(x0), self.value(xl), self.value(weight));
                let m = x0v.last_dim();
                let rows = x0v.n_rows();
                for r in 0..rows {
                    let gr = g.row_slice(r);
                    let r0 = x0v.row_slice(r);
                    let rl = xlv.row_slice(r);
                    let s: f64 = rl.iter().zip(wv.data()).map(|(a, b)| a * b).sum();
                    let g_dot_x0: f64 = gr.iter().zip(r0).map(|(a, b)| a * b).sum();
                    if needs(x0) {
                        let d = &mut acc!(x0)[r * m..(r + 1) * m];
                        for j in 0..m {
                            d[j] += gr[j] * s;
                        }
                    }
                    if needs(xl) {
                        let d = &mut acc!(xl)[r * m..(r + 1) * m];
                        for j in 0..m {
                            d[j] += gr[j] + g_dot_x0 * wv.data()[j];
                        }
                    }
                    if needs(weight) {
                        let d = acc!(weight);
                        for j in 0..m {
                            d[j] += g_dot_x0 * rl[j];
                        }
                    }
                    if needs(bias) {
                        let d = acc!(bias);
                        for j in 0..m {
                            d[j] += gr[j];
                        }
                    }
                }
            }
            &Op::Fm(e) => {
                let ev = self.value(e);
                let &[b, n, d] = ev.shape() else { unreachable!() };
                let de = acc!(e);
                for i in 0..b {
                    let gi = g.data()[i];
                    let inst = &ev.data()[i * n * d..(i + 1) * n * d];
                    for k in 0..d {
                        let sum: f64 = (0..n).map(|f| inst[f * d + k]).sum();
                        for f in 0..n {
                            de[i * n * d + f * d + k] += gi * (sum - inst[f * d + k]);
                        }
                    }
                }
            }
            &Op::Concat(a, c) => {
                let p = self.value(a).last_dim();
                let q = self.value(c).last_dim();
                let rows = g.n_rows();
                if needs(a) {
                    let da = acc!(a);
                    for r in 0..rows {
                        for (d, s) in da[r * p..(r + 1) * p].iter_mut().zip(&g.row_slice(r)[..p]) {
                            *d += s;
                        }
                    }
                }
                if needs(c) {
                    let dc = acc!(c);
                    for r in 0..rows {
                        for (d, s) in dc[r * q..(r + 1) * q].iter_mut().zip(&g.row_slice(r)[p..]) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Bce(p, labels) => {
                let pv = self.value(*p);
                let scale = g.data()[0] / labels.len() as f64;
                for ((d, &prob), &y) in acc!(*p).iter_mut().zip(pv.data()).zip(labels) {
                    if prob > PROB_CLIP && prob < 1.0 - PROB_CLIP {
                        *d += -scale * (y / prob - (1.0 - y) / (1.0 - prob));
                    }
                }
            }
            &Op::Sum(x) => {
                let s = g.data()[0];
                for d in acc!(x).iter_mut() {
                    *d += s;
                }
            }
        }
    }
}

impl Graph<'_> {
    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor>], n: NodeId) -> &'g mut [f64] {
        let shape = self.nodes[n.0].value.shape();
        grads[n.0]
            .get_or_insert_with(|| Tensor::zeros(shape))
            .data_mut()
    }
}

/// Mean clipped binary cross-entropy.
pub fn bce_value(probs: &[f64], labels: &[f64]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / probs.len() as f64
}

/// Output of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads[id.0].take()
    }
}

/// Value and gradients of a scalar function of `params`.
///
/// `build` receives the graph and one leaf per parameter and must return a
/// scalar node.
pub fn grad_of<F>(params: &[Tensor], build: F) -> Result<(f64, Vec<Tensor>)>
where
    F: for<'g> Fn(&mut Graph<'g>, &[NodeId]) -> Result<NodeId>,
{
    grad_of_with(params, Faults::default(), build)
}

pub fn grad_of_with<F>(params: &[Tensor], faults: Faults, build: F) -> Result<(f64, Vec<Tensor>)>
where
    F: for<'g> Fn(&mut Graph<'g>, &[NodeId]) -> Result<NodeId>,
{
    let mut graph = Graph::with_faults(faults);
    let leaves: Vec<NodeId> = params.iter().map(|p| graph.param(p)).collect();
    let out = build(&mut graph, &leaves)?;
    let value = graph.value(out).data()[0];
    let mut grads = graph.backward(out)?;
    let result = leaves
        .iter()
        .zip(params)
        .map(|(&id, p)| grads.take(id).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((value, result))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let (v, g) = grad_of(&[Tensor::scalar(3.0)], |g, ids| {
            let xm = g.reshape(ids[0], &[1, 1])?;
            let p = g.matmul(xm, xm)?;
            Ok(g.sum(p))
        })
        .unwrap();
        assert_eq!(v, 9.0);
        assert_eq!(g[0].data(), &[6.0]);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let m = Tensor::from_rows(&[vec![0.3, -1.2, 2.0], vec![1.0, 1.0, -0.5]]);
        let (_, g) = grad_of(&[m], |g, ids| {
            let s = g.softmax_rows(ids[0]);
            Ok(g.sum(s))
        })
        .unwrap();
        assert!(g[0].data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn unknown_primitive_is_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(1.0));
        match g.apply("tanh", &[x]) {
            Err(Error::UnregisteredOp(name)) => assert_eq!(name, "tanh"),
            other => panic!("expected unregistered op, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn relu_gradient_piecewise() {
        let (_, g) = grad_of(&[Tensor::row(vec![3.0, -3.0, 0.0])], |g, ids| {
            let r = g.relu(ids[0]);
            Ok(g.sum(r))
        })
        .unwrap();
        assert_eq!(g[0].data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn constants_receive_no_gradient_slot() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::row(vec![1.0, 2.0]));
        let w = Tensor::row(vec![0.5, 0.5]);
        let p = g.param(&w);
        let s = g.add(c, p).unwrap();
        let l = g.sum(s);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, 1.0]);
    }
}
