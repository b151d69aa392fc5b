use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{batch_iter, Dataset, Instance};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_scores, EvalResult};
use crate::model::{backward_and_accumulate, build_forward, predict, ModelConfig, ModelParams, Mode};
use crate::numerics::{Graph, Rng};
use crate::trainer::curriculum::{default_step_size, CurriculumAction, CurriculumState, LossReference};
use crate::trainer::optimizer::OptimizerState;

/// How the attention bottleneck evolves during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottleneckSchedule {
    /// Start at the field count and shrink on plateaus.
    #[default]
    Curriculum,
    /// Hold `k` fixed; plateaus only decay the learning rate.
    Fixed(usize),
}

fn default_batch_size() -> usize {
    4096
}

fn default_learning_rate() -> f64 {
    1e-4
}

fn default_max_epochs() -> usize {
    30
}

fn default_c_min() -> usize {
    2
}

fn default_lr_decay() -> f64 {
    0.1
}

fn default_lr_floor() -> f64 {
    1e-6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub bottleneck: BottleneckSchedule,
    #[serde(default = "default_c_min")]
    pub c_min: usize,
    /// Bottleneck decrement; `ceil(n / 8)` when unset.
    #[serde(default)]
    pub bottleneck_step: Option<usize>,
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    /// Training stops once the learning rate falls below this.
    #[serde(default = "default_lr_floor")]
    pub lr_floor: f64,
    #[serde(default)]
    pub loss_reference: LossReference,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            max_epochs: default_max_epochs(),
            bottleneck: BottleneckSchedule::Curriculum,
            c_min: default_c_min(),
            bottleneck_step: None,
            lr_decay: default_lr_decay(),
            lr_floor: default_lr_floor(),
            loss_reference: LossReference::Best,
        }
    }
}

impl TrainerConfig {
    /// Schedule state for a model with `n` fields.
    pub fn curriculum(&self, n: usize) -> Result<CurriculumState> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be at least 1".into()));
        }
        let (c_max, c_min) = match self.bottleneck {
            BottleneckSchedule::Curriculum => (n, self.c_min.min(n)),
            BottleneckSchedule::Fixed(k) => {
                if k < 1 || k > n {
                    return Err(Error::Parameter(format!("fixed bottleneck {k} outside [1, {n}]")));
                }
                (k, k)
            }
        };
        let step = self.bottleneck_step.unwrap_or_else(|| default_step_size(n));
        CurriculumState::new(
            c_max,
            c_min,
            step,
            self.lr_decay,
            self.learning_rate,
            self.max_epochs,
            self.loss_reference,
        )
    }
}

/// One completed epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_logloss: f64,
    pub val_auc: f64,
    /// Bottleneck and learning rate the epoch trained with.
    pub bottleneck: usize,
    pub lr: f64,
    /// Flag after the epoch-end update.
    pub flag: bool,
    pub action: CurriculumAction,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub const HEADER: [&'static str; 8] = ["epoch", "train_loss", "val_logloss", "val_auc", "C_t", "R_t", "flag", "action"];

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn format_record(r: &EpochRecord) -> String {
        format!(
            "{:>5}  {:>10.6}  {:>11.6}  {:>8.6}  {:>3}  {:>10.3e}  {:>4}  {}",
            r.epoch,
            r.train_loss,
            r.val_logloss,
            r.val_auc,
            r.bottleneck,
            r.lr,
            u8::from(r.flag),
            r.action.label()
        )
    }

    pub fn header_line() -> String {
        let h = Self::HEADER;
        format!(
            "{:>5}  {:>10}  {:>11}  {:>8}  {:>3}  {:>10}  {:>4}  {}",
            h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7]
        )
    }

    /// Plain-text table, one line per epoch.
    pub fn to_table(&self) -> String {
        let mut out = Self::header_line();
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{}", Self::format_record(r));
        }
        out
    }

    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_table().as_bytes())?;
        Ok(())
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.val_logloss <= r.val_logloss => Some(b),
                _ => Some(r),
            })
    }
}

/// Infer-mode AUC and logloss of the main prediction.
pub fn evaluate(params: &ModelParams, data: &Dataset, k: usize) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::Parameter("cannot evaluate an empty dataset".into()));
    }
    let scores = predict(&data.instances, params, k)?;
    evaluate_scores(&scores, &data.labels())
}

/// Share of truncated attention mass that lands on `fields`, averaged over
/// heads, query rows and instances.
pub fn attention_mass(params: &ModelParams, data: &Dataset, k: usize, fields: &[usize]) -> Result<f64> {
    let n = params.config.n_fields();
    let mut target = vec![false; n];
    for &f in fields {
        *target
            .get_mut(f)
            .ok_or_else(|| Error::Parameter(format!("field {f} out of {n}")))? = true;
    }
    let mut total = 0.0;
    let mut rows = 0usize;
    let mut rng = Rng::new(0);
    for chunk in data.instances.chunks(1024) {
        let mut g = Graph::new();
        let nodes = build_forward(&mut g, chunk, params, k, Mode::Infer, &mut rng)?;
        for &(_, truncated) in &nodes.attention {
            for row in g.value(truncated).data().chunks(n) {
                let mass: f64 = row.iter().sum();
                if mass > 0.0 {
                    let hit: f64 = row.iter().zip(&target).filter(|(_, &t)| t).map(|(v, _)| v).sum();
                    total += hit / mass;
                }
                rows += 1;
            }
        }
    }
    if rows == 0 {
        return Err(Error::Parameter("variant has no attention heads".into()));
    }
    Ok(total / rows as f64)
}

/// Parameters with the lowest validation logloss and the bottleneck they
/// were evaluated with.
#[derive(Clone, Debug, PartialEq)]
pub struct BestModel {
    pub params: ModelParams,
    pub bottleneck: usize,
    pub epoch: usize,
    pub val: EvalResult,
}

/// Stateful training loop. History stays available after a failure.
pub struct Trainer {
    pub config: TrainerConfig,
    pub params: ModelParams,
    pub schedule: CurriculumState,
    pub optimizer: OptimizerState,
    pub history: TrainHistory,
    pub best: Option<BestModel>,
    seed: u64,
    stopped: bool,
}

impl Trainer {
    pub fn new(model: &ModelConfig, config: &TrainerConfig, seed: u64) -> Result<Self> {
        let rng = Rng::new(seed);
        let params = ModelParams::init(model, &rng.derive(1))?;
        let schedule = config.curriculum(model.n_fields())?;
        Ok(Self {
            config: config.clone(),
            optimizer: OptimizerState::new(&params),
            params,
            schedule,
            history: TrainHistory::default(),
            best: None,
            seed,
            stopped: false,
        })
    }

    /// True once the epoch budget is spent or the learning rate hit the floor.
    pub fn finished(&self) -> bool {
        self.stopped || self.history.len() >= self.config.max_epochs
    }

    /// Trains one epoch, evaluates on `val` and updates the schedule.
    /// Returns `None` when training is already finished.
    pub fn run_epoch(&mut self, train: &Dataset, val: &Dataset) -> Result<Option<&EpochRecord>> {
        if self.finished() {
            return Ok(None);
        }
        if train.is_empty() {
            return Err(Error::Parameter("empty training set".into()));
        }
        if !val.has_both_classes() {
            return Err(Error::UndefinedMetric("validation set needs both classes".into()));
        }
        let epoch = self.history.len() + 1;
        let k = self.schedule.bottleneck;
        let lr = self.schedule.lr;
        let root = Rng::new(self.seed).derive(1000 + epoch as u64);
        let shuffle_seed = root.derive(1).next_u64();
        let mut dropout_rng = root.derive(2);

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut batch: Vec<Instance> = Vec::with_capacity(self.config.batch_size);
        for refs in batch_iter(train, self.config.batch_size, shuffle_seed, true)? {
            batch.clear();
            batch.extend(refs.into_iter().cloned());
            let (loss, grads) = backward_and_accumulate(&batch, &self.params, k, &mut dropout_rng)
                .map_err(|e| Error::Divergence {
                    epoch,
                    message: e.to_string(),
                })?;
            self.optimizer
                .update(&mut self.params, &grads, lr)
                .map_err(|e| Error::Divergence {
                    epoch,
                    message: e.to_string(),
                })?;
            loss_sum += loss.total * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = loss_sum / seen as f64;
        let val_result = evaluate(&self.params, val, k)?;
        if !val_result.logloss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: "validation logloss is not finite".into(),
            });
        }
        let improved = self.best.as_ref().is_none_or(|b| val_result.logloss < b.val.logloss);
        if improved {
            self.best = Some(BestModel {
                params: self.params.clone(),
                bottleneck: k,
                epoch,
                val: val_result,
            });
        }
        let action = self.schedule.step(val_result.logloss);
        if self.schedule.lr < self.config.lr_floor {
            self.stopped = true;
        }
        self.history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_logloss: val_result.logloss,
            val_auc: val_result.auc,
            bottleneck: k,
            lr,
            flag: self.schedule.flag,
            action,
        });
        Ok(self.history.records.last())
    }

    /// Runs until finished. The returned model is the best validation epoch,
    /// or the initial parameters when no epoch ran.
    pub fn fit(&mut self, train: &Dataset, val: &Dataset) -> Result<()> {
        while self.run_epoch(train, val)?.is_some() {}
        Ok(())
    }

    pub fn best_params(&self) -> (&ModelParams, usize) {
        match &self.best {
            Some(b) => (&b.params, b.bottleneck),
            None => (&self.params, self.schedule.bottleneck),
        }
    }
}

/// Result of [`fit`].
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub params: ModelParams,
    pub bottleneck: usize,
    pub history: TrainHistory,
}

pub fn fit(
    model: &ModelConfig,
    config: &TrainerConfig,
    train: &Dataset,
    val: &Dataset,
    seed: u64,
) -> Result<FitOutcome> {
    let mut t = Trainer::new(model, config, seed)?;
    t.fit(train, val)?;
    let (params, bottleneck) = t.best_params();
    Ok(FitOutcome {
        params: params.clone(),
        bottleneck,
        history: t.history,
    })
}
