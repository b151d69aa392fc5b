use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use delta_core::data::{
    encode_rows, read_cache, read_delimited, split_indices, write_cache, CachedSplits, Dataset, Vocabulary,
};
use delta_core::gradcheck::run_suite;
use delta_core::metrics::EvalResult;
use delta_core::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, ModelParams, Variant};
use delta_core::numerics::Faults;
use delta_core::trainer::{evaluate, TrainHistory, Trainer};

use crate::config::RunConfig;
use crate::UsageError;

pub const HISTORY_FILE: &str = "history.txt";
pub const CHECKPOINT_FILE: &str = "model.dltc";
pub const CONFIG_FILE: &str = "config.json";

/// Vocabulary sidecar written next to a cache: `data.dlta` → `data.vocab.json`.
pub fn vocab_path(cache: &Path) -> PathBuf {
    cache.with_extension("vocab.json")
}

pub fn prep(input: &Path, output: &Path, min_freq: usize, numeric: &[String], split_seed: u64) -> Result<()> {
    let file = File::open(input).with_context(|| format!("cannot open {}", input.display()))?;
    let table = read_delimited(BufReader::new(file), numeric)
        .with_context(|| format!("reading {}", input.display()))?;
    let (train, val, test) = split_indices(table.rows.len(), split_seed)?;
    // vocabulary from training rows only; unseen tokens fall back to index 0
    let vocab = Vocabulary::build(&table.schema, train.iter().map(|&i| table.rows[i].clone()), min_freq)?;
    let data = encode_rows(&table, &vocab)?;
    let splits = CachedSplits {
        train: data.subset(&train),
        val: data.subset(&val),
        test: data.subset(&test),
    };
    let mut w = BufWriter::new(File::create(output).with_context(|| format!("cannot create {}", output.display()))?);
    write_cache(&mut w, &splits)?;
    w.flush()?;
    fs::write(vocab_path(output), vocab.to_json()?)?;
    println!("fields {}", vocab.n_fields());
    println!(
        "vocab sizes {}",
        vocab.sizes().iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    );
    println!(
        "instances {} (train {}, val {}, test {})",
        data.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    Ok(())
}

pub fn load_splits(cache: &Path) -> Result<CachedSplits> {
    let sidecar = vocab_path(cache);
    let schema = if sidecar.exists() {
        Some(Vocabulary::from_json(&fs::read_to_string(&sidecar)?)?.schema())
    } else {
        None
    };
    let file = File::open(cache).with_context(|| format!("cannot open {}", cache.display()))?;
    read_cache(BufReader::new(file), schema).with_context(|| format!("reading {}", cache.display()))
}

pub fn resolve_data(cfg: &RunConfig) -> Result<CachedSplits> {
    match (&cfg.data.cache, &cfg.data.synthetic) {
        (Some(path), _) => load_splits(path),
        (None, Some(syn)) => {
            let data = syn.spec().generate()?.dataset;
            let (train, val, test) = split_indices(data.len(), syn.seed)?;
            Ok(CachedSplits {
                train: data.subset(&train),
                val: data.subset(&val),
                test: data.subset(&test),
            })
        }
        (None, None) => bail!(UsageError("config: no data source".into())),
    }
}

/// Model config with `vocab_sizes` taken from the data when unset.
pub fn model_for(cfg: &ModelConfig, data: &Dataset) -> Result<ModelConfig> {
    let mut model = cfg.clone();
    if model.vocab_sizes.is_empty() {
        model.vocab_sizes = data.vocab_sizes.clone();
    } else if model.vocab_sizes != data.vocab_sizes {
        bail!(UsageError(format!(
            "config: model.vocab_sizes {:?} disagree with data {:?}",
            model.vocab_sizes, data.vocab_sizes
        )));
    }
    model.validate().map_err(|e| UsageError(format!("config: {e}")))?;
    Ok(model)
}

struct TrainOutcome {
    params: ModelParams,
    bottleneck: usize,
    val: EvalResult,
}

/// Trains one model, echoing each epoch when `verbose`. The history file is
/// written even when training fails part-way.
fn train_model(
    model: &ModelConfig,
    cfg: &RunConfig,
    seed: u64,
    splits: &CachedSplits,
    history_out: Option<&Path>,
    verbose: bool,
) -> Result<TrainOutcome> {
    let mut trainer =
        Trainer::new(model, &cfg.trainer, seed).map_err(|e| UsageError(format!("config: {e}")))?;
    if verbose {
        println!("{}", TrainHistory::header_line());
    }
    let result = loop {
        match trainer.run_epoch(&splits.train, &splits.val) {
            Ok(Some(record)) => {
                if verbose {
                    println!("{}", TrainHistory::format_record(record));
                }
            }
            Ok(None) => break Ok(()),
            Err(e) => break Err(e),
        }
    };
    if let Some(path) = history_out {
        fs::write(path, trainer.history.to_table()).with_context(|| format!("cannot write {}", path.display()))?;
    }
    result?;
    let (params, bottleneck) = trainer.best_params();
    let val = evaluate(params, &splits.val, bottleneck)?;
    Ok(TrainOutcome {
        params: params.clone(),
        bottleneck,
        val,
    })
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let splits = resolve_data(cfg)?;
    let model = model_for(&cfg.model, &splits.train)?;
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("cannot create {}", cfg.output_dir.display()))?;
    let mut effective = cfg.clone();
    effective.model = model.clone();
    fs::write(cfg.output_dir.join(CONFIG_FILE), effective.to_json()?)?;

    let history = cfg.output_dir.join(HISTORY_FILE);
    let out = train_model(&model, cfg, cfg.seed, &splits, Some(&history), true)?;
    let ckpt_path = cfg.output_dir.join(CHECKPOINT_FILE);
    let mut w = BufWriter::new(File::create(&ckpt_path)?);
    save_checkpoint(
        &mut w,
        &Checkpoint {
            params: out.params,
            bottleneck: out.bottleneck,
        },
    )?;
    w.flush()?;
    println!("best bottleneck {}", out.bottleneck);
    println!("val auc {:.6} logloss {:.6}", out.val.auc, out.val.logloss);
    println!("wrote {} and {}", history.display(), ckpt_path.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
}

pub fn eval(checkpoint: &Path, data: &Path, split: Split) -> Result<()> {
    let file = File::open(checkpoint).with_context(|| format!("cannot open {}", checkpoint.display()))?;
    let ckpt = load_checkpoint(BufReader::new(file)).with_context(|| format!("loading {}", checkpoint.display()))?;
    let splits = load_splits(data)?;
    let part = match split {
        Split::Train => &splits.train,
        Split::Val => &splits.val,
        Split::Test => &splits.test,
    };
    if part.vocab_sizes != ckpt.params.config.vocab_sizes {
        bail!(
            "schema mismatch: checkpoint expects vocab sizes {:?}, data has {:?}",
            ckpt.params.config.vocab_sizes,
            part.vocab_sizes
        );
    }
    let res = evaluate(&ckpt.params, part, ckpt.bottleneck)?;
    println!("auc {:.6}", res.auc);
    println!("logloss {:.6}", res.logloss);
    println!("instances {}", res.n_instances);
    Ok(())
}

pub fn parse_variants(list: &str) -> Result<Vec<Variant>> {
    let variants = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Variant>().map_err(|e| UsageError(e.to_string()).into()))
        .collect::<Result<Vec<_>>>()?;
    if variants.is_empty() {
        bail!(UsageError("no variants given".into()));
    }
    Ok(variants)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains every variant on seeds `cfg.seed .. cfg.seed + seeds` and prints
/// test AUC and logloss as mean ± sample standard deviation.
pub fn ablate(cfg: &RunConfig, variants: &[Variant], seeds: usize) -> Result<()> {
    if seeds == 0 {
        bail!(UsageError("--seeds must be at least 1".into()));
    }
    let splits = resolve_data(cfg)?;
    let base = model_for(&cfg.model, &splits.train)?;
    println!(
        "{:<11} {:>5}  {:>8}  {:>8}  {:>8}  {:>8}",
        "variant", "seeds", "auc", "auc_sd", "logloss", "ll_sd"
    );
    for &variant in variants {
        let model = ModelConfig { variant, ..base.clone() };
        let mut aucs = Vec::with_capacity(seeds);
        let mut losses = Vec::with_capacity(seeds);
        for s in 0..seeds as u64 {
            let out = train_model(&model, cfg, cfg.seed + s, &splits, None, false)
                .with_context(|| format!("variant {variant}, seed {}", cfg.seed + s))?;
            let res = evaluate(&out.params, &splits.test, out.bottleneck)?;
            aucs.push(res.auc);
            losses.push(res.logloss);
        }
        let (auc, auc_sd) = mean_std(&aucs);
        let (ll, ll_sd) = mean_std(&losses);
        println!(
            "{:<11} {:>5}  {:>8.6}  {:>8.6}  {:>8.6}  {:>8.6}",
            variant.name(),
            seeds,
            auc,
            auc_sd,
            ll,
            ll_sd
        );
    }
    Ok(())
}

/// Prints the report; returns whether every check passed.
pub fn gradcheck(faults: Faults) -> Result<bool> {
    let report = run_suite(faults)?;
    print!("{}", report.to_text());
    println!("primitives covered: {}", report.covered_primitives().join(", "));
    Ok(report.passed())
}
