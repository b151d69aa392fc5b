//! Explicit embedding optimisation: an auxiliary cross network over the
//! flattened original embeddings, trained through its own loss and skipped
//! at inference.

use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, Rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct CrossLayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl CrossLayerParams {
    pub fn init(m: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (m as f64).sqrt();
        Self {
            weight: Tensor::new(vec![m], (0..m).map(|_| rng.uniform_range(-bound, bound)).collect())
                .expect("vector"),
            bias: Tensor::zeros(&[m]),
        }
    }
}

/// Stacked cross layers plus a scalar logit head.
#[derive(Clone, Debug, PartialEq)]
pub struct EeoBranch {
    pub layers: Vec<CrossLayerParams>,
    /// `[m×1]`
    pub head_weight: Tensor,
    /// `[1]`
    pub head_bias: Tensor,
}

impl EeoBranch {
    pub fn init(m: usize, depth: usize, rng: &mut Rng) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Parameter("cross depth must be at least 1".into()));
        }
        let layers = (0..depth).map(|_| CrossLayerParams::init(m, rng)).collect();
        let bound = 1.0 / (m as f64).sqrt();
        Ok(Self {
            layers,
            head_weight: Tensor::new(vec![m, 1], (0..m).map(|_| rng.uniform_range(-bound, bound)).collect())?,
            head_bias: Tensor::zeros(&[1]),
        })
    }

    pub fn width(&self) -> usize {
        self.head_weight.shape()[0]
    }
}

/// `x0 ⊙ (x_l·w) + b + x_l` on `[1×m]` rows.
pub fn cross_layer(x0: &Tensor, xl: &Tensor, p: &CrossLayerParams) -> Result<Tensor> {
    x0.check_same("cross_layer", xl)?;
    let m = x0.len();
    if p.weight.len() != m || p.bias.len() != m {
        return Err(Error::Dimension {
            op: "cross_layer",
            left: x0.shape().to_vec(),
            right: p.weight.shape().to_vec(),
        });
    }
    let s: f64 = xl.data().iter().zip(p.weight.data()).map(|(a, b)| a * b).sum();
    let data = (0..m)
        .map(|j| x0.data()[j] * s + p.bias.data()[j] + xl.data()[j])
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// Pre-sigmoid auxiliary logit for one flattened embedding row.
pub fn eeo_forward(e_flat: &Tensor, branch: &EeoBranch) -> Result<f64> {
    let mut x = e_flat.clone();
    for layer in &branch.layers {
        x = cross_layer(e_flat, &x, layer)?;
    }
    if x.len() != branch.width() {
        return Err(Error::Dimension {
            op: "eeo_forward",
            left: x.shape().to_vec(),
            right: branch.head_weight.shape().to_vec(),
        });
    }
    let dot: f64 = x.data().iter().zip(branch.head_weight.data()).map(|(a, b)| a * b).sum();
    Ok(dot + branch.head_bias.data()[0])
}

/// Second-order factorisation machine over `[n×d]` embeddings plus `bias`.
pub fn eeo_fm_forward(e: &Tensor, bias: f64) -> Result<f64> {
    let (n, d) = e.dims2("eeo_fm_forward")?;
    if n < 2 {
        return Err(Error::Parameter(format!("factorisation machine needs n >= 2, got {n}")));
    }
    let mut total = 0.0;
    for k in 0..d {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for i in 0..n {
            let v = e.get2(i, k);
            sum += v;
            sq += v * v;
        }
        total += sum * sum - sq;
    }
    Ok(0.5 * total + bias)
}

/// Leaf ids of a registered [`EeoBranch`].
#[derive(Clone, Debug)]
pub struct EeoNodes {
    pub layers: Vec<(NodeId, NodeId)>,
    pub head_weight: NodeId,
    pub head_bias: NodeId,
}

/// Batched cross network over `x0: [b×m]`. Returns the last cross output and
/// the `[b×1]` logits.
pub fn eeo_graph(g: &mut Graph<'_>, x0: NodeId, nodes: &EeoNodes) -> Result<(NodeId, NodeId)> {
    let mut x = x0;
    for &(w, b) in &nodes.layers {
        x = g.cross(x0, x, w, b)?;
    }
    let logit = g.matmul(x, nodes.head_weight)?;
    let logit = g.add_bias(logit, nodes.head_bias)?;
    Ok((x, logit))
}

/// Batched factorisation-machine logits over `emb: [b, n, d]`.
pub fn fm_graph(g: &mut Graph<'_>, emb: NodeId, bias: NodeId) -> Result<NodeId> {
    let f = g.fm(emb)?;
    g.add_bias(f, bias)
}
