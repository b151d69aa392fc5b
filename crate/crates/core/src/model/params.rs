use crate::eeo::EeoBranch;
use crate::error::{Error, Result};
use crate::layers::{CtmHeadParams, EmbeddingTable, FusionGate};
use crate::model::{AuxBranch, ModelConfig};
use crate::numerics::{Rng, Tensor};

/// Fully connected layer, `weight: [in×out]`, `bias: [out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    /// Weights uniform in `±1/√fan_in`, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Tensor::new(
                vec![fan_in, fan_out],
                (0..fan_in * fan_out).map(|_| rng.uniform_range(-bound, bound)).collect(),
            )
            .expect("dense shape"),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.last_dim()
    }
}

fn tower(input: usize, widths: &[usize], rng: &mut Rng) -> Vec<Dense> {
    let mut layers = Vec::with_capacity(widths.len());
    let mut fan_in = input;
    for &w in widths {
        layers.push(Dense::init(fan_in, w, rng));
        fan_in = w;
    }
    layers
}

/// Every learnable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embedding: EmbeddingTable,
    /// Two heads, or none for attention-free variants.
    pub heads: Vec<CtmHeadParams>,
    /// One gate per head, or none when the variant skips fusion.
    pub gates: Vec<FusionGate>,
    pub tower1: Vec<Dense>,
    pub tower2: Vec<Dense>,
    pub output: Dense,
    pub eeo: Option<EeoBranch>,
    /// Global bias of the factorisation-machine auxiliary branch.
    pub fm_bias: Option<Tensor>,
}

impl ModelParams {
    /// Random initialisation. Each component draws from its own derived
    /// stream, so variants that share a component share its initial values.
    pub fn init(config: &ModelConfig, rng: &Rng) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let m = config.flat_dim();
        let variant = config.variant;

        let embedding = EmbeddingTable::init(&config.vocab_sizes, d, config.embed_init, &mut rng.derive(1));
        let heads = if variant.uses_attention() {
            let mut r = rng.derive(2);
            vec![CtmHeadParams::init(d, &mut r), CtmHeadParams::init(d, &mut r)]
        } else {
            Vec::new()
        };
        let gates = if variant.uses_gates() {
            vec![FusionGate::zeros(m), FusionGate::zeros(m)]
        } else {
            Vec::new()
        };
        let tower1 = tower(m, &config.tower1, &mut rng.derive(3));
        let tower2 = tower(m, &config.tower2, &mut rng.derive(4));
        let eeo = match variant.aux() {
            AuxBranch::Cross | AuxBranch::CrossConcat => {
                Some(EeoBranch::init(m, config.cross_depth, &mut rng.derive(6))?)
            }
            _ => None,
        };
        let fm_bias = (variant.aux() == AuxBranch::Fm).then(|| Tensor::zeros(&[1]));
        let output = Dense::init(Self::output_fan_in(config), 1, &mut rng.derive(5));
        Ok(Self {
            config: config.clone(),
            embedding,
            heads,
            gates,
            tower1,
            tower2,
            output,
            eeo,
            fm_bias,
        })
    }

    /// Same structure as `init`, every tensor zero.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let mut p = Self::init(config, &Rng::new(0))?;
        for t in p.tensors_mut() {
            t.fill(0.0);
        }
        Ok(p)
    }

    fn output_fan_in(config: &ModelConfig) -> usize {
        let m = config.flat_dim();
        let t1 = config.tower1.last().copied().unwrap_or(m);
        let t2 = config.tower2.last().copied().unwrap_or(m);
        let extra = if config.variant.aux() == AuxBranch::CrossConcat { m } else { 0 };
        t1 + t2 + extra
    }

    /// Names and tensors in the canonical order shared by
    /// [`Self::tensors_mut`], gradients and optimizer state.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![("embedding".into(), &self.embedding.table)];
        for (h, head) in self.heads.iter().enumerate() {
            out.push((format!("head{}.w_q", h + 1), &head.w_q));
            out.push((format!("head{}.w_k", h + 1), &head.w_k));
            out.push((format!("head{}.w_v", h + 1), &head.w_v));
        }
        for (i, gate) in self.gates.iter().enumerate() {
            out.push((format!("gate{}", i + 1), &gate.logits));
        }
        for (name, layers) in [("tower1", &self.tower1), ("tower2", &self.tower2)] {
            for (i, l) in layers.iter().enumerate() {
                out.push((format!("{name}.{i}.weight"), &l.weight));
                out.push((format!("{name}.{i}.bias"), &l.bias));
            }
        }
        out.push(("output.weight".into(), &self.output.weight));
        out.push(("output.bias".into(), &self.output.bias));
        if let Some(eeo) = &self.eeo {
            for (i, l) in eeo.layers.iter().enumerate() {
                out.push((format!("eeo.cross{i}.weight"), &l.weight));
                out.push((format!("eeo.cross{i}.bias"), &l.bias));
            }
            out.push(("eeo.head.weight".into(), &eeo.head_weight));
            out.push(("eeo.head.bias".into(), &eeo.head_bias));
        }
        if let Some(b) = &self.fm_bias {
            out.push(("eeo_fm.bias".into(), b));
        }
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.named_tensors().into_iter().map(|(n, _)| n).collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.embedding.table];
        for head in &mut self.heads {
            out.push(&mut head.w_q);
            out.push(&mut head.w_k);
            out.push(&mut head.w_v);
        }
        for gate in &mut self.gates {
            out.push(&mut gate.logits);
        }
        for l in self.tower1.iter_mut().chain(self.tower2.iter_mut()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        if let Some(eeo) = &mut self.eeo {
            for l in &mut eeo.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
            out.push(&mut eeo.head_weight);
            out.push(&mut eeo.head_bias);
        }
        if let Some(b) = &mut self.fm_bias {
            out.push(b);
        }
        out
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.named_tensors().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Zero-filled tensors aligned with [`Self::named_tensors`].
    pub fn zero_grads(&self) -> ParamGrads {
        let (names, tensors) = self
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, Tensor::zeros(t.shape())))
            .unzip();
        ParamGrads { names, tensors }
    }
}

/// One gradient slot per parameter, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamGrads {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Fails with the first parameter holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.names.iter().zip(&self.tensors).find(|(_, t)| !t.is_finite()) {
            Some((name, _)) => Err(Error::NonFinite(name.clone())),
            None => Ok(()),
        }
    }
}
