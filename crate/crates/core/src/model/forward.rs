use crate::data::Instance;
use crate::eeo::{eeo_graph, fm_graph, EeoNodes};
use crate::error::{Error, Result};
use crate::layers::{ctm_graph, AttentionState, HeadNodes};
use crate::model::params::{ModelParams, ParamGrads};
use crate::model::AuxBranch;
use crate::numerics::graph::bce_value;
use crate::numerics::{Faults, Graph, NodeId, Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, auxiliary branch evaluated.
    Train,
    /// Dropout off, auxiliary branch skipped.
    Infer,
    /// Dropout off, auxiliary branch evaluated alongside the main path.
    InferWithAux,
}

impl Mode {
    fn training(self) -> bool {
        self == Mode::Train
    }
}

/// Which loss terms contribute to the gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LossTerms {
    /// `l_main + λ·l_aux`.
    #[default]
    Total,
    MainOnly,
    AuxOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub y_main: f64,
    pub y_eeo: Option<f64>,
    /// One state per head; empty for attention-free variants.
    pub attention: Vec<AttentionState>,
}

/// Leaves of every parameter, in canonical order.
struct Leaves {
    all: Vec<NodeId>,
    embedding: NodeId,
    heads: Vec<HeadNodes>,
    gates: Vec<NodeId>,
    tower1: Vec<(NodeId, NodeId)>,
    tower2: Vec<(NodeId, NodeId)>,
    output: (NodeId, NodeId),
    eeo: Option<EeoNodes>,
    fm_bias: Option<NodeId>,
}

fn register<'a>(g: &mut Graph<'a>, p: &'a ModelParams) -> Leaves {
    let mut all = Vec::new();
    let mut leaf = |g: &mut Graph<'a>, t: &'a Tensor| {
        let id = g.param(t);
        all.push(id);
        id
    };
    let embedding = leaf(g, &p.embedding.table);
    let heads = p
        .heads
        .iter()
        .map(|h| HeadNodes {
            w_q: leaf(g, &h.w_q),
            w_k: leaf(g, &h.w_k),
            w_v: leaf(g, &h.w_v),
        })
        .collect();
    let gates = p.gates.iter().map(|gt| leaf(g, &gt.logits)).collect();
    let tower1 = p.tower1.iter().map(|l| (leaf(g, &l.weight), leaf(g, &l.bias))).collect();
    let tower2 = p.tower2.iter().map(|l| (leaf(g, &l.weight), leaf(g, &l.bias))).collect();
    let output = (leaf(g, &p.output.weight), leaf(g, &p.output.bias));
    let eeo = p.eeo.as_ref().map(|b| EeoNodes {
        layers: b.layers.iter().map(|l| (leaf(g, &l.weight), leaf(g, &l.bias))).collect(),
        head_weight: leaf(g, &b.head_weight),
        head_bias: leaf(g, &b.head_bias),
    });
    let fm_bias = p.fm_bias.as_ref().map(|b| leaf(g, b));
    Leaves {
        all,
        embedding,
        heads,
        gates,
        tower1,
        tower2,
        output,
        eeo,
        fm_bias,
    }
}

/// Nodes of one batched forward pass.
pub struct ForwardNodes {
    /// `[b×1]` main-path probabilities.
    pub y_main: NodeId,
    /// `[b×1]` auxiliary probabilities, when evaluated.
    pub y_eeo: Option<NodeId>,
    /// Per head: `[b,n,n]` weights and truncated weights.
    pub attention: Vec<(NodeId, NodeId)>,
    leaves: Vec<NodeId>,
}

fn tower(
    g: &mut Graph<'_>,
    input: NodeId,
    layers: &[(NodeId, NodeId)],
    dropout: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<NodeId> {
    let mut x = input;
    for &(w, b) in layers {
        x = g.matmul(x, w)?;
        x = g.add_bias(x, b)?;
        x = g.relu(x);
        x = g.dropout(x, dropout, rng, training)?;
    }
    Ok(x)
}

fn check_batch(batch: &[Instance], params: &ModelParams, k: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    let n = params.config.n_fields();
    if k < 1 || k > n {
        return Err(Error::Parameter(format!("bottleneck k={k} outside [1, {n}]")));
    }
    if params.embedding.vocab_sizes() != params.config.vocab_sizes.as_slice() {
        return Err(Error::Parameter("embedding table disagrees with config vocab sizes".into()));
    }
    Ok(())
}

/// Builds the batched network into `g`.
pub fn build_forward<'a>(
    g: &mut Graph<'a>,
    batch: &[Instance],
    params: &'a ModelParams,
    k: usize,
    mode: Mode,
    rng: &mut Rng,
) -> Result<ForwardNodes> {
    check_batch(batch, params, k)?;
    let cfg = &params.config;
    let variant = cfg.variant;
    let (b, n, d) = (batch.len(), cfg.n_fields(), cfg.embed_dim);
    let training = mode.training();
    let leaves = register(g, params);

    let rows = params.embedding.flat_indices(batch)?;
    let emb = g.gather_rows(leaves.embedding, rows)?;
    let flat = g.reshape(emb, &[b, n * d])?;

    let bottleneck = variant.truncates().then_some((k, cfg.truncation_scope));
    let mut inputs = [flat, flat];
    let mut attention = Vec::new();
    for (h, head) in leaves.heads.iter().enumerate() {
        let ctm = ctm_graph(g, emb, *head, b, n, bottleneck)?;
        attention.push((ctm.weights, ctm.truncated));
        inputs[h] = match leaves.gates.get(h) {
            Some(&gate) => g.gate(flat, ctm.enhanced, gate)?,
            None => ctm.enhanced,
        };
    }

    let t1 = tower(g, inputs[0], &leaves.tower1, cfg.dropout, rng, training)?;
    let t2 = tower(g, inputs[1], &leaves.tower2, cfg.dropout, rng, training)?;
    let mut joined = g.concat(t1, t2)?;

    let aux = variant.aux();
    let eval_aux = mode != Mode::Infer || aux == AuxBranch::CrossConcat;
    let mut y_eeo = None;
    if eval_aux {
        match (&leaves.eeo, leaves.fm_bias) {
            (Some(nodes), _) => {
                let (last, logit) = eeo_graph(g, flat, nodes)?;
                if aux == AuxBranch::CrossConcat {
                    joined = g.concat(joined, last)?;
                } else {
                    y_eeo = Some(g.sigmoid(logit));
                }
            }
            (None, Some(bias)) => {
                let emb3 = g.reshape(emb, &[b, n, d])?;
                let logit = fm_graph(g, emb3, bias)?;
                y_eeo = Some(g.sigmoid(logit));
            }
            (None, None) => {}
        }
    }

    let logit = g.matmul(joined, leaves.output.0)?;
    let logit = g.add_bias(logit, leaves.output.1)?;
    let y_main = g.sigmoid(logit);
    Ok(ForwardNodes {
        y_main,
        y_eeo,
        attention,
        leaves: leaves.all,
    })
}

fn attention_states(g: &Graph<'_>, nodes: &ForwardNodes, i: usize, n: usize, k: usize) -> Result<Vec<AttentionState>> {
    let span = i * n * n..(i + 1) * n * n;
    nodes
        .attention
        .iter()
        .map(|&(w, t)| {
            let weights = Tensor::new(vec![n, n], g.value(w).data()[span.clone()].to_vec())?;
            let truncated = Tensor::new(vec![n, n], g.value(t).data()[span.clone()].to_vec())?;
            let kept = match g.kept_mask(t) {
                Some(mask) => mask[span.clone()].to_vec(),
                None => vec![true; n * n],
            };
            let k = if w == t { n } else { k };
            Ok(AttentionState {
                weights,
                truncated,
                kept,
                k,
            })
        })
        .collect()
}

/// Per-instance outputs with attention diagnostics.
pub fn delta_forward(
    batch: &[Instance],
    params: &ModelParams,
    k: usize,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Vec<ForwardOutput>> {
    let mut g = Graph::new();
    let nodes = build_forward(&mut g, batch, params, k, mode, rng)?;
    let n = params.config.n_fields();
    let y_main = g.value(nodes.y_main).data();
    let y_eeo = nodes.y_eeo.map(|id| g.value(id).data());
    (0..batch.len())
        .map(|i| {
            Ok(ForwardOutput {
                y_main: y_main[i],
                y_eeo: y_eeo.map(|v| v[i]),
                attention: attention_states(&g, &nodes, i, n, k)?,
            })
        })
        .collect()
}

/// Main-path probabilities in infer mode, evaluated in chunks.
pub fn predict(instances: &[Instance], params: &ModelParams, k: usize) -> Result<Vec<f64>> {
    const CHUNK: usize = 2048;
    let mut out = Vec::with_capacity(instances.len());
    let mut rng = Rng::new(0);
    for chunk in instances.chunks(CHUNK) {
        let mut g = Graph::new();
        let nodes = build_forward(&mut g, chunk, params, k, Mode::Infer, &mut rng)?;
        out.extend_from_slice(g.value(nodes.y_main).data());
    }
    Ok(out)
}

/// Mean clipped binary cross-entropy.
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::Parameter(format!(
            "{} predictions for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Parameter("labels must be 0 or 1".into()));
    }
    Ok(bce_value(probs, labels))
}

pub fn total_loss(l_main: f64, l_eeo: f64, lambda: f64) -> f64 {
    l_main + lambda * l_eeo
}

/// Loss values of one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub main: f64,
    pub aux: Option<f64>,
    /// The differentiated objective.
    pub total: f64,
}

/// Train-mode forward and backward over `batch` with the configured λ.
pub fn backward_and_accumulate(
    batch: &[Instance],
    params: &ModelParams,
    k: usize,
    rng: &mut Rng,
) -> Result<(StepLoss, ParamGrads)> {
    gradients(batch, params, k, rng, LossTerms::Total, Faults::default())
}

/// Train-mode gradients of the selected loss terms. Fails with the name of
/// the first parameter whose gradient is not finite.
pub fn gradients(
    batch: &[Instance],
    params: &ModelParams,
    k: usize,
    rng: &mut Rng,
    terms: LossTerms,
    faults: Faults,
) -> Result<(StepLoss, ParamGrads)> {
    let mut g = Graph::with_faults(faults);
    let (loss, nodes) = build_loss(&mut g, batch, params, k, rng, terms)?;
    let mut grads = g.backward(loss.1)?;
    let mut out = params.zero_grads();
    for (slot, &id) in out.tensors.iter_mut().zip(&nodes.leaves) {
        if let Some(t) = grads.take(id) {
            *slot = t;
        }
    }
    out.check_finite()?;
    Ok((loss.0, out))
}

/// Scalar objective value for the selected terms, without a backward pass.
pub fn objective(
    batch: &[Instance],
    params: &ModelParams,
    k: usize,
    rng: &mut Rng,
    terms: LossTerms,
) -> Result<f64> {
    let mut g = Graph::new();
    let (loss, _) = build_loss(&mut g, batch, params, k, rng, terms)?;
    Ok(g.value(loss.1).data()[0])
}

fn build_loss<'a>(
    g: &mut Graph<'a>,
    batch: &[Instance],
    params: &'a ModelParams,
    k: usize,
    rng: &mut Rng,
    terms: LossTerms,
) -> Result<((StepLoss, NodeId), ForwardNodes)> {
    let nodes = build_forward(g, batch, params, k, Mode::Train, rng)?;
    let labels: Vec<f64> = batch.iter().map(|i| f64::from(i.label)).collect();
    let lambda = params.config.effective_lambda();
    let main = g.bce(nodes.y_main, labels.clone())?;
    let aux = match nodes.y_eeo {
        Some(y) if lambda > 0.0 || terms == LossTerms::AuxOnly => Some(g.bce(y, labels)?),
        _ => None,
    };
    let objective = match (terms, aux) {
        (LossTerms::MainOnly, _) | (LossTerms::Total, None) => main,
        (LossTerms::Total, Some(a)) => {
            let weighted = g.scale(a, lambda);
            g.add(main, weighted)?
        }
        (LossTerms::AuxOnly, Some(a)) => a,
        (LossTerms::AuxOnly, None) => {
            return Err(Error::Parameter(format!(
                "variant {} has no auxiliary loss",
                params.config.variant
            )))
        }
    };
    let l_main = g.value(main).data()[0];
    let l_aux = aux.map(|a| g.value(a).data()[0]);
    let total = g.value(objective).data()[0];
    if !total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((
        (
            StepLoss {
                main: l_main,
                aux: l_aux,
                total,
            },
            objective,
        ),
        nodes,
    ))
}
