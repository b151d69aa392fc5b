//! Embedding lookup, the conscious truncation attention head and the
//! element-wise fusion gate.
//!
//! Each piece comes in two forms: a standalone function on plain tensors
//! (single instance, used for diagnostics and reference checks) and a graph
//! builder that the model uses for batched, differentiable evaluation.

use crate::data::Instance;
use crate::error::{Error, Result};
use crate::numerics::ops;
use crate::numerics::{matmul, softmax_rows, Graph, NodeId, Rng, Tensor, TruncationScope};

/// All per-field embedding matrices stacked into one `[Σ V_i × d]` table.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub table: Tensor,
    offsets: Vec<usize>,
    sizes: Vec<usize>,
}

impl EmbeddingTable {
    pub fn zeros(vocab_sizes: &[usize], dim: usize) -> Self {
        let mut offsets = Vec::with_capacity(vocab_sizes.len());
        let mut total = 0;
        for &s in vocab_sizes {
            offsets.push(total);
            total += s;
        }
        Self {
            table: Tensor::zeros(&[total, dim]),
            offsets,
            sizes: vocab_sizes.to_vec(),
        }
    }

    pub fn init(vocab_sizes: &[usize], dim: usize, scale: f64, rng: &mut Rng) -> Self {
        let mut t = Self::zeros(vocab_sizes, dim);
        for v in t.table.data_mut() {
            *v = rng.uniform_range(-scale, scale);
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.table.last_dim()
    }

    pub fn n_fields(&self) -> usize {
        self.sizes.len()
    }

    pub fn vocab_sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Row of the stacked table holding `index` of `field`.
    pub fn flat_index(&self, field: usize, index: usize) -> Result<usize> {
        let size = *self.sizes.get(field).ok_or_else(|| {
            Error::Parameter(format!("field {field} out of {} fields", self.sizes.len()))
        })?;
        if index >= size {
            return Err(Error::Lookup { field, index, size });
        }
        Ok(self.offsets[field] + index)
    }

    pub fn row(&self, field: usize, index: usize) -> Result<&[f64]> {
        Ok(self.table.row_slice(self.flat_index(field, index)?))
    }

    /// Stacked-table rows for every field of every instance, instance-major.
    pub fn flat_indices<'a, I>(&self, batch: I) -> Result<Vec<usize>>
    where
        I: IntoIterator<Item = &'a Instance>,
    {
        let mut out = Vec::new();
        for inst in batch {
            if inst.indices.len() != self.sizes.len() {
                return Err(Error::Parameter(format!(
                    "instance has {} fields, table has {}",
                    inst.indices.len(),
                    self.sizes.len()
                )));
            }
            for (field, &ix) in inst.indices.iter().enumerate() {
                out.push(self.flat_index(field, ix as usize)?);
            }
        }
        Ok(out)
    }
}

/// `[n×d]` embeddings of one instance.
pub fn embed_lookup(table: &EmbeddingTable, inst: &Instance) -> Result<Tensor> {
    let rows = table.flat_indices([inst])?;
    let d = table.dim();
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in rows {
        data.extend_from_slice(table.table.row_slice(r));
    }
    Tensor::new(vec![inst.indices.len(), d], data)
}

/// Square query/key/value projections of one attention head.
#[derive(Clone, Debug, PartialEq)]
pub struct CtmHeadParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

impl CtmHeadParams {
    /// Uniform in `±1/√d`.
    pub fn init(d: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let mut mk = || {
            Tensor::new(
                vec![d, d],
                (0..d * d).map(|_| rng.uniform_range(-bound, bound)).collect(),
            )
            .expect("square")
        };
        Self {
            w_q: mk(),
            w_k: mk(),
            w_v: mk(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.last_dim()
    }
}

/// Attention weights of one instance before and after truncation.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionState {
    /// `[n×n]` softmax weights.
    pub weights: Tensor,
    /// `[n×n]` weights with dropped entries zeroed.
    pub truncated: Tensor,
    pub kept: Vec<bool>,
    pub k: usize,
}

impl AttentionState {
    /// Kept column indices of each row, ascending.
    pub fn kept_columns(&self) -> Vec<Vec<usize>> {
        let n = self.weights.last_dim();
        self.kept
            .chunks(n)
            .map(|row| (0..n).filter(|&j| row[j]).collect())
            .collect()
    }
}

fn check_bottleneck(k: usize, n: usize) -> Result<()> {
    if k < 1 || k > n {
        return Err(Error::Parameter(format!("bottleneck k={k} outside [1, {n}]")));
    }
    Ok(())
}

fn attention_inputs(e: &Tensor, head: &CtmHeadParams) -> Result<(Tensor, Tensor)> {
    let (_, d) = e.dims2("ctm_forward")?;
    if head.dim() != d {
        return Err(Error::Dimension {
            op: "ctm_forward",
            left: e.shape().to_vec(),
            right: head.w_q.shape().to_vec(),
        });
    }
    let q = matmul(e, &head.w_q)?;
    let k = matmul(e, &head.w_k)?;
    let v = matmul(e, &head.w_v)?;
    let scale = 1.0 / (d as f64).sqrt();
    let scores = matmul(&q, &k.transpose()?)?.map(|s| s * scale);
    Ok((softmax_rows(&scores), v))
}

/// `θ·V` visiting only the kept columns of each row. Returns the `[n×d]`
/// result and the number of multiply-adds performed (`d` per kept entry).
pub fn truncated_aggregate(theta: &Tensor, kept_columns: &[Vec<usize>], v: &Tensor) -> (Tensor, u64) {
    let n = theta.last_dim();
    let d = v.last_dim();
    let mut out = vec![0.0; kept_columns.len() * d];
    let mut madds = 0u64;
    for (r, cols) in kept_columns.iter().enumerate() {
        let acc = &mut out[r * d..(r + 1) * d];
        for &j in cols {
            let w = theta.data()[r * n + j];
            for (o, x) in acc.iter_mut().zip(v.row_slice(j)) {
                *o += w * x;
            }
            madds += d as u64;
        }
    }
    (
        Tensor::new(vec![kept_columns.len(), d], out).expect("aggregate shape"),
        madds,
    )
}

/// One truncated attention head over `[n×d]` embeddings with per-row
/// selection. Returns the flattened `[1 × n·d]` enhanced embedding.
pub fn ctm_forward(e: &Tensor, head: &CtmHeadParams, k: usize) -> Result<(Tensor, AttentionState)> {
    ctm_forward_scoped(e, head, k, TruncationScope::PerRow)
}

pub fn ctm_forward_scoped(
    e: &Tensor,
    head: &CtmHeadParams,
    k: usize,
    scope: TruncationScope,
) -> Result<(Tensor, AttentionState)> {
    let (n, d) = e.dims2("ctm_forward")?;
    check_bottleneck(k, n)?;
    let (weights, v) = attention_inputs(e, head)?;
    let (truncated, kept) = ops::topk_truncate(&weights, k, scope)?;
    let state = AttentionState {
        weights,
        truncated,
        kept,
        k,
    };
    let (out, _) = truncated_aggregate(&state.truncated, &state.kept_columns(), &v);
    Ok((out.into_shape(&[1, n * d])?, state))
}

/// Plain soft attention: every weight participates.
pub fn soft_attention_forward(e: &Tensor, head: &CtmHeadParams) -> Result<Tensor> {
    let (n, d) = e.dims2("soft_attention")?;
    let (weights, v) = attention_inputs(e, head)?;
    let mut out = vec![0.0; n * d];
    for r in 0..n {
        for j in 0..n {
            let w = weights.get2(r, j);
            for c in 0..d {
                out[r * d + c] += w * v.get2(j, c);
            }
        }
    }
    Tensor::new(vec![1, n * d], out)
}

/// Per-row top-`k` truncation (see [`ops::topk_truncate`]).
pub fn topk_truncate(w: &Tensor, k: usize) -> Result<(Tensor, Vec<bool>)> {
    ops::topk_truncate(w, k, TruncationScope::PerRow)
}

/// Learnable logits of one element-wise fusion gate.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionGate {
    pub logits: Tensor,
}

impl FusionGate {
    /// Logits start at zero: equal mixing.
    pub fn zeros(len: usize) -> Self {
        Self {
            logits: Tensor::zeros(&[len]),
        }
    }
}

/// `σ(gate)⊙original + (1−σ(gate))⊙enhanced`.
pub fn efg_fuse(original: &Tensor, enhanced: &Tensor, gate: &FusionGate) -> Result<Tensor> {
    original.check_same("efg_fuse", enhanced)?;
    if gate.logits.len() != original.len() {
        return Err(Error::Dimension {
            op: "efg_fuse",
            left: original.shape().to_vec(),
            right: gate.logits.shape().to_vec(),
        });
    }
    let data = original
        .data()
        .iter()
        .zip(enhanced.data())
        .zip(gate.logits.data())
        .map(|((&x, &y), &g)| {
            let s = ops::sigmoid_scalar(g);
            s * x + (1.0 - s) * y
        })
        .collect();
    Tensor::new(original.shape().to_vec(), data)
}

/// Leaf ids of one head registered in a graph.
#[derive(Clone, Copy, Debug)]
pub struct HeadNodes {
    pub w_q: NodeId,
    pub w_k: NodeId,
    pub w_v: NodeId,
}

/// Graph nodes produced by [`ctm_graph`].
#[derive(Clone, Copy, Debug)]
pub struct CtmNodes {
    /// `[b, n·d]` enhanced embeddings.
    pub enhanced: NodeId,
    /// `[b, n, n]` softmax weights.
    pub weights: NodeId,
    /// `[b, n, n]` truncated weights (same as `weights` when not truncating).
    pub truncated: NodeId,
}

/// Batched attention head over `emb: [b·n, d]`.
///
/// `bottleneck: None` builds plain soft attention with no truncation node.
pub fn ctm_graph(
    g: &mut Graph<'_>,
    emb: NodeId,
    head: HeadNodes,
    batch: usize,
    n: usize,
    bottleneck: Option<(usize, TruncationScope)>,
) -> Result<CtmNodes> {
    let d = g.value(emb).last_dim();
    let project = |g: &mut Graph<'_>, w: NodeId| -> Result<NodeId> {
        let p = g.matmul(emb, w)?;
        g.reshape(p, &[batch, n, d])
    };
    let q = project(g, head.w_q)?;
    let k = project(g, head.w_k)?;
    let v = project(g, head.w_v)?;
    let scores = g.batch_qkt(q, k)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = g.softmax_rows(scores);
    let truncated = match bottleneck {
        Some((kk, scope)) => {
            check_bottleneck(kk, n)?;
            g.topk_truncate(weights, kk, scope)?
        }
        None => weights,
    };
    let mixed = g.batch_matmul(truncated, v)?;
    let enhanced = g.reshape(mixed, &[batch, n * d])?;
    Ok(CtmNodes {
        enhanced,
        weights,
        truncated,
    })
}
