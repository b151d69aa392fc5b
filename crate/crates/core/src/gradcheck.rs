//! Central finite-difference checks of every graph primitive, the layer
//! builders and the assembled model.

use std::fmt::Write as _;

use crate::data::Instance;
use crate::eeo::{eeo_graph, fm_graph, EeoNodes};
use crate::error::Result;
use crate::layers::{ctm_graph, HeadNodes};
use crate::model::{gradients, objective, LossTerms, ModelConfig, ModelParams, Variant};
use crate::numerics::{grad_of_with, Faults, Graph, NodeId, Rng, Tensor, TruncationScope, PRIMITIVES};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so that gradients that are zero
/// in both forms compare as equal.
pub const ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub layer: String,
    pub parameter: String,
    pub worst_error: f64,
    pub entries: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst_error < TOLERANCE
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.results.iter().filter(|r| !r.passed()).collect()
    }

    /// Primitive names with at least one check.
    pub fn covered_primitives(&self) -> Vec<&str> {
        PRIMITIVES
            .iter()
            .copied()
            .filter(|p| {
                self.results
                    .iter()
                    .any(|r| r.layer.strip_prefix("primitive ") == Some(*p))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            let _ = writeln!(
                out,
                "{:<4}  {:<28}  {:<22}  worst {:.3e}  ({} entries)",
                if r.passed() { "ok" } else { "FAIL" },
                r.layer,
                r.parameter,
                r.worst_error,
                r.entries
            );
        }
        let failures = self.failures();
        let _ = writeln!(
            out,
            "{} checks, {} failed, tolerance {:.0e}",
            self.results.len(),
            failures.len(),
            TOLERANCE
        );
        for f in failures {
            let _ = writeln!(
                out,
                "failure: layer {} parameter {} relative error {:.3e}",
                f.layer, f.parameter, f.worst_error
            );
        }
        out
    }
}

/// Compares analytic and central-difference gradients of a scalar function.
pub fn check_function<F>(
    layer: &str,
    names: &[&str],
    params: &[Tensor],
    faults: Faults,
    build: F,
) -> Result<Vec<CheckResult>>
where
    F: for<'g> Fn(&mut Graph<'g>, &[NodeId]) -> Result<NodeId>,
{
    let (_, analytic) = grad_of_with(params, faults, &build)?;
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = ps.iter().map(|p| g.param(p)).collect();
        let out = build(&mut g, &leaves)?;
        Ok(g.value(out).data()[0])
    };
    let mut work = params.to_vec();
    let mut results = Vec::with_capacity(params.len());
    for (i, name) in names.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..params[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + STEP;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - STEP;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[i].data()[j], numeric));
        }
        results.push(CheckResult {
            layer: layer.to_string(),
            parameter: name.to_string(),
            worst_error: worst,
            entries: params[i].len(),
        });
    }
    Ok(results)
}

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::new(shape.to_vec(), (0..shape.iter().product()).map(|_| rng.normal()).collect())
        .expect("shape")
}

/// Random values bounded away from zero, so ReLU kinks stay out of reach.
fn away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor {
    random(shape, rng).map(|v| if v.abs() < 0.1 { v.signum() * 0.1 + v } else { v })
}

/// Scalar readout `Σ x ⊙ c` through a fixed random weighting.
fn readout(g: &mut Graph<'_>, x: NodeId, seed: u64) -> Result<NodeId> {
    let len = g.value(x).len();
    let flat = g.reshape(x, &[1, len])?;
    let c = g.constant(random(&[len, 1], &mut Rng::new(seed)));
    let y = g.matmul(flat, c)?;
    Ok(g.sum(y))
}

fn primitive_checks(faults: Faults, rng: &mut Rng) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut add = |name: &str, names: &[&str], params: Vec<Tensor>, build: &dyn for<'g> Fn(&mut Graph<'g>, &[NodeId]) -> Result<NodeId>| -> Result<()> {
        out.extend(check_function(&format!("primitive {name}"), names, &params, faults, build)?);
        Ok(())
    };
    add("matmul", &["a", "b"], vec![random(&[3, 4], rng), random(&[4, 2], rng)], &|g, p| {
        let y = g.matmul(p[0], p[1])?;
        readout(g, y, 1)
    })?;
    add("reshape", &["x"], vec![random(&[2, 6], rng)], &|g, p| {
        let y = g.reshape(p[0], &[3, 4])?;
        let w = g.constant(random(&[4, 2], &mut Rng::new(2)));
        let z = g.matmul(y, w)?;
        readout(g, z, 3)
    })?;
    add("add_bias", &["x", "bias"], vec![random(&[3, 4], rng), random(&[4], rng)], &|g, p| {
        let y = g.add_bias(p[0], p[1])?;
        readout(g, y, 4)
    })?;
    add("add", &["a", "b"], vec![random(&[2, 3], rng), random(&[2, 3], rng)], &|g, p| {
        let y = g.add(p[0], p[1])?;
        readout(g, y, 5)
    })?;
    add("scale", &["x"], vec![random(&[2, 3], rng)], &|g, p| {
        let y = g.scale(p[0], -0.7);
        readout(g, y, 6)
    })?;
    add("sigmoid", &["x"], vec![random(&[3, 3], rng)], &|g, p| {
        let y = g.sigmoid(p[0]);
        readout(g, y, 7)
    })?;
    add("relu", &["x"], vec![away_from_zero(&[3, 4], rng)], &|g, p| {
        let y = g.relu(p[0]);
        readout(g, y, 8)
    })?;
    add("dropout", &["x"], vec![random(&[4, 5], rng)], &|g, p| {
        let y = g.dropout(p[0], 0.4, &mut Rng::new(9), true)?;
        readout(g, y, 10)
    })?;
    add("softmax_rows", &["x"], vec![random(&[2, 3, 4], rng)], &|g, p| {
        let y = g.softmax_rows(p[0]);
        readout(g, y, 11)
    })?;
    for (scope, seed) in [(TruncationScope::PerRow, 12), (TruncationScope::Global, 13)] {
        add("topk_truncate", &["w"], vec![random(&[2, 4, 4], rng)], &|g, p| {
            let w = g.softmax_rows(p[0]);
            let y = g.topk_truncate(w, 2, scope)?;
            readout(g, y, seed)
        })?;
    }
    add("batch_qkt", &["q", "k"], vec![random(&[2, 3, 4], rng), random(&[2, 3, 4], rng)], &|g, p| {
        let y = g.batch_qkt(p[0], p[1])?;
        readout(g, y, 14)
    })?;
    add("batch_matmul", &["a", "v"], vec![random(&[2, 3, 4], rng), random(&[2, 4, 2], rng)], &|g, p| {
        let y = g.batch_matmul(p[0], p[1])?;
        readout(g, y, 15)
    })?;
    add("gather_rows", &["table"], vec![random(&[5, 3], rng)], &|g, p| {
        let y = g.gather_rows(p[0], vec![4, 0, 4, 2])?;
        readout(g, y, 16)
    })?;
    add("gate", &["x", "y", "gate"], vec![random(&[3, 4], rng), random(&[3, 4], rng), random(&[4], rng)], &|g, p| {
        let y = g.gate(p[0], p[1], p[2])?;
        readout(g, y, 17)
    })?;
    add(
        "cross",
        &["x0", "xl", "weight", "bias"],
        vec![random(&[3, 4], rng), random(&[3, 4], rng), random(&[4], rng), random(&[4], rng)],
        &|g, p| {
            let y = g.cross(p[0], p[1], p[2], p[3])?;
            readout(g, y, 18)
        },
    )?;
    add("fm", &["e"], vec![random(&[2, 3, 2], rng)], &|g, p| {
        let y = g.fm(p[0])?;
        readout(g, y, 19)
    })?;
    add("concat", &["a", "b"], vec![random(&[2, 3], rng), random(&[2, 2], rng)], &|g, p| {
        let y = g.concat(p[0], p[1])?;
        readout(g, y, 20)
    })?;
    let probs = random(&[5, 1], rng).map(|v| 0.5 + 0.35 * v.tanh());
    add("bce", &["probs"], vec![probs], &|g, p| g.bce(p[0], vec![1.0, 0.0, 0.0, 1.0, 1.0]))?;
    add("sum", &["x"], vec![random(&[2, 3], rng)], &|g, p| Ok(g.sum(p[0])))?;
    Ok(out)
}

fn layer_checks(faults: Faults, rng: &mut Rng) -> Result<Vec<CheckResult>> {
    let (b, n, d) = (2, 4, 3);
    let mut out = Vec::new();
    for (label, bottleneck) in [
        ("layer attention k=2", Some((2, TruncationScope::PerRow))),
        ("layer attention soft", None),
    ] {
        let params = vec![
            random(&[b * n, d], rng),
            random(&[d, d], rng),
            random(&[d, d], rng),
            random(&[d, d], rng),
        ];
        out.extend(check_function(label, &["embeddings", "w_q", "w_k", "w_v"], &params, faults, |g, p| {
            let head = HeadNodes {
                w_q: p[1],
                w_k: p[2],
                w_v: p[3],
            };
            let nodes = ctm_graph(g, p[0], head, b, n, bottleneck)?;
            readout(g, nodes.enhanced, 30)
        })?);
    }
    let m = n * d;
    let params = vec![random(&[b, m], rng), random(&[b, m], rng), random(&[m], rng)];
    out.extend(check_function("layer fusion gate", &["original", "enhanced", "gate"], &params, faults, |g, p| {
        let y = g.gate(p[0], p[1], p[2])?;
        readout(g, y, 31)
    })?);
    let mut params = vec![random(&[b, m], rng)];
    for _ in 0..2 {
        params.push(random(&[m], rng).map(|v| 0.3 * v));
        params.push(random(&[m], rng));
    }
    params.push(random(&[m, 1], rng));
    params.push(random(&[1], rng));
    out.extend(check_function(
        "layer cross network",
        &["x0", "cross0.weight", "cross0.bias", "cross1.weight", "cross1.bias", "head.weight", "head.bias"],
        &params,
        faults,
        |g, p| {
            let nodes = EeoNodes {
                layers: vec![(p[1], p[2]), (p[3], p[4])],
                head_weight: p[5],
                head_bias: p[6],
            };
            let (_, logit) = eeo_graph(g, p[0], &nodes)?;
            readout(g, logit, 32)
        },
    )?);
    let params = vec![random(&[b, n, d], rng), random(&[1], rng)];
    out.extend(check_function("layer factorisation machine", &["embeddings", "bias"], &params, faults, |g, p| {
        let y = fm_graph(g, p[0], p[1])?;
        readout(g, y, 33)
    })?);
    Ok(out)
}

/// Tiny model used by the full-model check: 4 fields, 3-dim embeddings,
/// one hidden layer of 8 in each tower, two cross layers.
pub fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        vocab_sizes: vec![3, 4, 2, 5],
        embed_dim: 3,
        tower1: vec![8],
        tower2: vec![8],
        dropout: 0.2,
        cross_depth: 2,
        lambda: 0.5,
        variant,
        truncation_scope: TruncationScope::PerRow,
        embed_init: 0.5,
    }
}

/// Analytic model gradients against central differences of the objective.
pub fn check_model(config: &ModelConfig, k: usize, seed: u64, faults: Faults) -> Result<Vec<CheckResult>> {
    let mut rng = Rng::new(seed);
    let mut params = ModelParams::init(config, &rng.derive(1))?;
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.3 * rng.normal();
        }
    }
    let batch: Vec<Instance> = (0..6)
        .map(|i| {
            Instance::new(
                config.vocab_sizes.iter().map(|&s| rng.below(s) as u32).collect(),
                (i % 2) as u8,
            )
        })
        .collect();
    let dropout_seed = seed ^ 0x5eed;
    let (_, analytic) = gradients(&batch, &params, k, &mut Rng::new(dropout_seed), LossTerms::Total, faults)?;
    let layer = format!("model {}", config.variant);
    let mut results = Vec::new();
    for i in 0..analytic.names.len() {
        let mut worst: f64 = 0.0;
        let len = analytic.tensors[i].len();
        for j in 0..len {
            let orig = params.tensors()[i].data()[j];
            params.tensors_mut()[i].data_mut()[j] = orig + STEP;
            let up = objective(&batch, &params, k, &mut Rng::new(dropout_seed), LossTerms::Total)?;
            params.tensors_mut()[i].data_mut()[j] = orig - STEP;
            let down = objective(&batch, &params, k, &mut Rng::new(dropout_seed), LossTerms::Total)?;
            params.tensors_mut()[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic.tensors[i].data()[j], numeric));
        }
        results.push(CheckResult {
            layer: layer.clone(),
            parameter: analytic.names[i].clone(),
            worst_error: worst,
            entries: len,
        });
    }
    Ok(results)
}

/// The whole suite: every primitive, the layer builders, and the tiny model
/// in every variant.
pub fn run_suite(faults: Faults) -> Result<GradcheckReport> {
    let mut rng = Rng::new(2024);
    let mut results = primitive_checks(faults, &mut rng)?;
    results.extend(layer_checks(faults, &mut rng)?);
    for (i, v) in Variant::ALL.into_iter().enumerate() {
        results.extend(check_model(&tiny_config(v), 2, 100 + i as u64, faults)?);
    }
    Ok(GradcheckReport { results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert!(relative_error(1e-12, 0.0) < 1e-5);
    }

    #[test]
    fn primitives_pass_and_are_all_covered() {
        let results = primitive_checks(Faults::default(), &mut Rng::new(1)).unwrap();
        let report = GradcheckReport { results };
        assert!(report.passed(), "{}", report.to_text());
        assert_eq!(report.covered_primitives(), PRIMITIVES.to_vec());
    }

    #[test]
    fn flipped_gate_gradient_is_caught() {
        let report = GradcheckReport {
            results: check_model(&tiny_config(Variant::Full), 2, 1, Faults { flip_gate_grad: true }).unwrap(),
        };
        let failures = report.failures();
        assert!(!failures.is_empty());
        assert!(failures.iter().all(|f| f.parameter.contains("gate")), "{}", report.to_text());
    }
}
