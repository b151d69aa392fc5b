use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::TruncationScope;

/// Architecture variant, used for ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Truncated attention, fusion gates and the auxiliary cross-net loss.
    #[default]
    Full,
    /// Plain soft attention in place of truncation.
    CtmSoft,
    /// No fusion gates: towers read the enhanced embeddings alone.
    NoEfg,
    /// Cross-net output concatenated into the final layer, no auxiliary loss.
    EeoConcat,
    /// Auxiliary branch is a factorisation machine instead of a cross net.
    EeoFm,
    /// Auxiliary branch removed.
    NoEeo,
    /// Both towers over raw embeddings; no attention, gates or auxiliary branch.
    MlpOnly,
}

/// What the auxiliary branch looks like in a variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxBranch {
    None,
    Cross,
    CrossConcat,
    Fm,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::CtmSoft,
        Variant::NoEfg,
        Variant::EeoConcat,
        Variant::EeoFm,
        Variant::NoEeo,
        Variant::MlpOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::CtmSoft => "ctm_soft",
            Variant::NoEfg => "no_efg",
            Variant::EeoConcat => "eeo_concat",
            Variant::EeoFm => "eeo_fm",
            Variant::NoEeo => "no_eeo",
            Variant::MlpOnly => "mlp_only",
        }
    }

    pub fn uses_attention(self) -> bool {
        self != Variant::MlpOnly
    }

    pub fn truncates(self) -> bool {
        !matches!(self, Variant::CtmSoft | Variant::MlpOnly)
    }

    pub fn uses_gates(self) -> bool {
        !matches!(self, Variant::NoEfg | Variant::MlpOnly)
    }

    pub fn aux(self) -> AuxBranch {
        match self {
            Variant::Full | Variant::CtmSoft | Variant::NoEfg => AuxBranch::Cross,
            Variant::EeoConcat => AuxBranch::CrossConcat,
            Variant::EeoFm => AuxBranch::Fm,
            Variant::NoEeo | Variant::MlpOnly => AuxBranch::None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "unknown variant `{s}` (expected one of: {})",
                    Variant::ALL.map(Variant::name).join(", ")
                ))
            })
    }
}

fn default_embed_dim() -> usize {
    20
}

fn default_tower1() -> Vec<usize> {
    vec![400, 400, 400]
}

fn default_tower2() -> Vec<usize> {
    vec![800]
}

fn default_dropout() -> f64 {
    0.5
}

fn default_cross_depth() -> usize {
    3
}

fn default_lambda() -> f64 {
    0.5
}

fn default_embed_init() -> f64 {
    0.05
}

/// Architecture hyperparameters. `vocab_sizes` fixes the field count `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub vocab_sizes: Vec<usize>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    /// Deep, narrow tower fed by the first head.
    #[serde(default = "default_tower1")]
    pub tower1: Vec<usize>,
    /// Shallow, wide tower fed by the second head.
    #[serde(default = "default_tower2")]
    pub tower2: Vec<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_cross_depth")]
    pub cross_depth: usize,
    /// Weight of the auxiliary loss.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub truncation_scope: TruncationScope,
    /// Embedding rows start uniform in `±embed_init`.
    #[serde(default = "default_embed_init")]
    pub embed_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_sizes: Vec::new(),
            embed_dim: default_embed_dim(),
            tower1: default_tower1(),
            tower2: default_tower2(),
            dropout: default_dropout(),
            cross_depth: default_cross_depth(),
            lambda: default_lambda(),
            variant: Variant::Full,
            truncation_scope: TruncationScope::PerRow,
            embed_init: default_embed_init(),
        }
    }
}

impl ModelConfig {
    pub fn n_fields(&self) -> usize {
        self.vocab_sizes.len()
    }

    /// Flattened embedding width `n·d`.
    pub fn flat_dim(&self) -> usize {
        self.n_fields() * self.embed_dim
    }

    /// Auxiliary loss weight actually applied; zero when the variant has no
    /// auxiliary loss.
    pub fn effective_lambda(&self) -> f64 {
        match self.variant.aux() {
            AuxBranch::Cross | AuxBranch::Fm => self.lambda,
            AuxBranch::CrossConcat | AuxBranch::None => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_sizes.is_empty() || self.vocab_sizes.contains(&0) {
            return Err(Error::Parameter("vocab_sizes must be non-empty and positive".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::Parameter("embed_dim must be positive".into()));
        }
        if self.tower1.contains(&0) || self.tower2.contains(&0) {
            return Err(Error::Parameter("tower layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Parameter(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.cross_depth == 0 && matches!(self.variant.aux(), AuxBranch::Cross | AuxBranch::CrossConcat) {
            return Err(Error::Parameter("cross_depth must be at least 1".into()));
        }
        if self.variant == Variant::EeoFm && self.n_fields() < 2 {
            return Err(Error::Parameter("factorisation machine needs at least 2 fields".into()));
        }
        if self.embed_init <= 0.0 {
            return Err(Error::Parameter("embed_init must be positive".into()));
        }
        Ok(())
    }
}
