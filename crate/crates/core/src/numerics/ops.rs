//! Forward kernels shared by the graph primitives and the standalone layer
//! functions.

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// `out[m×p] += a[m×k] · b[k×p]`.
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, p: usize, out: &mut [f64]) {
    for i in 0..m {
        let out_row = &mut out[i * p..(i + 1) * p];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[kk * p..(kk + 1) * p];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// `out[k×p] += a[m×k]ᵀ · b[m×p]`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], m: usize, k: usize, p: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * p..(i + 1) * p];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let out_row = &mut out[kk * p..(kk + 1) * p];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// `out[m×k] += a[m×p] · b[k×p]ᵀ`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], m: usize, p: usize, k: usize, out: &mut [f64]) {
    let mut bt = vec![0.0; p * k];
    for r in 0..k {
        for c in 0..p {
            bt[c * k + r] = b[r * p + c];
        }
    }
    gemm_nn(a, &bt, m, p, k, out);
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, p) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * p];
    gemm_nn(a.data(), b.data(), m, k, p, &mut out);
    Tensor::new(vec![m, p], out)
}

/// Numerically stable logistic function.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Softmax over the last dimension, with the row max subtracted first.
pub fn softmax_rows(m: &Tensor) -> Tensor {
    let mut out = m.clone();
    let cols = m.last_dim();
    if cols == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(cols) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Which entries of an attention matrix compete for the bottleneck.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationScope {
    /// Each query row keeps its own `k` strongest weights.
    #[default]
    PerRow,
    /// The whole `n×n` matrix of one instance keeps its `k·n` strongest
    /// weights, so the total budget matches `PerRow`.
    Global,
}

/// Indices of the `k` largest values, larger first, ties to the lower index.
pub(crate) fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Keeps the top-`k` entries per row (or per `n×n` block under
/// [`TruncationScope::Global`]) verbatim and zeroes the rest.
///
/// Returns the truncated tensor and the kept mask. No renormalisation.
pub fn topk_truncate(w: &Tensor, k: usize, scope: TruncationScope) -> Result<(Tensor, Vec<bool>)> {
    let n = w.last_dim();
    if k < 1 || k > n {
        return Err(Error::Parameter(format!(
            "bottleneck k={k} outside [1, {n}]"
        )));
    }
    let mut mask = vec![false; w.len()];
    match scope {
        TruncationScope::PerRow => {
            for (r, row) in w.data().chunks(n).enumerate() {
                if k == n {
                    mask[r * n..(r + 1) * n].iter_mut().for_each(|m| *m = true);
                    continue;
                }
                for j in top_k_indices(row, k) {
                    mask[r * n + j] = true;
                }
            }
        }
        TruncationScope::Global => {
            let block = n * n;
            if w.len() % block != 0 {
                return Err(Error::Dimension {
                    op: "topk_truncate(global)",
                    left: w.shape().to_vec(),
                    right: vec![n, n],
                });
            }
            for (b, mat) in w.data().chunks(block).enumerate() {
                for j in top_k_indices(mat, k * n) {
                    mask[b * block + j] = true;
                }
            }
        }
    }
    let data = w
        .data()
        .iter()
        .zip(&mask)
        .map(|(&v, &keep)| if keep { v } else { 0.0 })
        .collect();
    Ok((Tensor::new(w.shape().to_vec(), data)?, mask))
}

/// Inverted dropout. Returns the output and the per-entry multiplier
/// (`0` or `1/(1-rate)`) so the backward pass can reuse it; inference mode
/// and `rate == 0` return the input unchanged and consume no randomness.
pub fn dropout(
    x: &Tensor,
    rate: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep_scale })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, Some(mask)))
}
