use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::finetune::finetune;
use super::metrics::{evaluate, Metrics};
use super::{Result, Task, TrainConfig, TrainError};
use crate::datagen::{shared_unigrams, HeadSet, TrainingExample, STOPWORDS};
use crate::derive_seed;
use crate::model::Model;

/// A labeled example with the raw text it was encoded from (used for the
/// unigram disjointness check and for canonical ordering).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvItem {
    pub text: String,
    pub example: TrainingExample,
}

/// `pool` supplies training (and dev) data. `test` is the fixed held-out set
/// of the disjoint mode and is ignored by the standard mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CvData {
    pub pool: Vec<CvItem>,
    #[serde(default)]
    pub test: Vec<CvItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// `k` folds of the pool; each fold is the test set once.
    Standard,
    /// `k` random training samples from the pool, scored on the fixed test
    /// set, which must share no non-stopword unigram with any sample.
    CtDisjoint,
}

fn default_k() -> usize {
    5
}
fn default_seeds() -> Vec<u64> {
    alloc::vec![0, 1]
}
fn default_dev_fraction() -> f64 {
    0.2
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub mode: SplitMode,
    /// Training examples per run; the rest of the training portion is the dev
    /// set. `None` holds out `dev_fraction` of the training portion instead.
    #[serde(default)]
    pub train_size: Option<usize>,
    #[serde(default = "default_dev_fraction")]
    pub dev_fraction: f64,
    /// Re-initialize the task head before each run.
    #[serde(default = "default_true")]
    pub reset_head: bool,
}

impl CvConfig {
    pub fn new(mode: SplitMode) -> Self {
        CvConfig {
            k: default_k(),
            seeds: default_seeds(),
            mode,
            train_size: None,
            dev_fraction: default_dev_fraction(),
            reset_head: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (zero for a single value).
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> MeanStd {
        let n = xs.len();
        if n == 0 {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return MeanStd { mean, std: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        MeanStd {
            mean,
            std: libm::sqrt(var),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fold: usize,
    pub seed: u64,
    pub train_size: usize,
    pub dev_size: usize,
    pub best_epoch: usize,
    pub best_accuracy_epoch: usize,
    pub dev_perplexity: f64,
    pub test: Metrics,
}

/// Test metrics over all runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: MeanStd,
    pub perplexity: MeanStd,
    pub epochs_to_best: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub task: Task,
    pub mode: SplitMode,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRecord>,
    pub aggregate: Aggregate,
}

impl CvReport {
    pub fn from_runs(task: Task, mode: SplitMode, k: usize, seeds: Vec<u64>, runs: Vec<RunRecord>) -> CvReport {
        let col = |f: &dyn Fn(&RunRecord) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
        CvReport {
            aggregate: Aggregate {
                accuracy: col(&|r| r.test.accuracy),
                perplexity: col(&|r| r.test.perplexity),
                epochs_to_best: col(&|r| r.best_epoch as f64),
            },
            task,
            mode,
            k,
            seeds,
            runs,
        }
    }
}

fn cmp_items(a: &CvItem, b: &CvItem) -> Ordering {
    let (x, y) = (&a.example, &b.example);
    a.text
        .cmp(&b.text)
        .then_with(|| x.ids.cmp(&y.ids))
        .then_with(|| x.segment_ids.cmp(&y.segment_ids))
        .then_with(|| x.boundary_labels.cmp(&y.boundary_labels))
        .then_with(|| x.pad_label.cmp(&y.pad_label))
        .then_with(|| x.nsp_label.cmp(&y.nsp_label))
        .then_with(|| x.mlm_positions.cmp(&y.mlm_positions))
        .then_with(|| x.mlm_labels.cmp(&y.mlm_labels))
}

fn canonical(items: &[CvItem]) -> Vec<CvItem> {
    let mut v = items.to_vec();
    v.sort_by(cmp_items);
    v
}

struct Split {
    train: Vec<CvItem>,
    dev: Vec<CvItem>,
    test: Vec<CvItem>,
}

/// Divides a training portion into train and dev.
fn train_dev(portion: Vec<CvItem>, cv: &CvConfig) -> Result<(Vec<CvItem>, Vec<CvItem>)> {
    let n = portion.len();
    let n_train = match cv.train_size {
        Some(t) => t,
        None => n - (libm::ceil(cv.dev_fraction * n as f64) as usize).clamp(1, n),
    };
    if n_train == 0 || n_train >= n {
        return Err(TrainError::Config(alloc::format!(
            "training portion of {n} cannot give {n_train} training examples and a nonempty dev set"
        )));
    }
    let mut train = portion;
    let dev = train.split_off(n_train);
    Ok((train, dev))
}

fn texts(items: &[CvItem]) -> Vec<&str> {
    items.iter().map(|i| i.text.as_str()).collect()
}

fn make_splits(data: &CvData, cv: &CvConfig) -> Result<Vec<(usize, u64, Split)>> {
    let pool = canonical(&data.pool);
    let mut out = Vec::new();
    match cv.mode {
        SplitMode::Standard => {
            if pool.len() < cv.k {
                return Err(TrainError::Config(alloc::format!("{} examples for {} folds", pool.len(), cv.k)));
            }
            for &seed in &cv.seeds {
                let mut order: Vec<usize> = (0..pool.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX)));
                for fold in 0..cv.k {
                    let (lo, hi) = (fold * pool.len() / cv.k, (fold + 1) * pool.len() / cv.k);
                    let test = order[lo..hi].iter().map(|&i| pool[i].clone()).collect();
                    let rest = order[..lo].iter().chain(&order[hi..]).map(|&i| pool[i].clone()).collect();
                    let (train, dev) = train_dev(rest, cv)?;
                    out.push((fold, seed, Split { train, dev, test }));
                }
            }
        }
        SplitMode::CtDisjoint => {
            let test = canonical(&data.test);
            if test.is_empty() {
                return Err(TrainError::Empty("held-out test set"));
            }
            for &seed in &cv.seeds {
                for fold in 0..cv.k {
                    let mut order: Vec<usize> = (0..pool.len()).collect();
                    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, fold as u64)));
                    let portion = order.iter().map(|&i| pool[i].clone()).collect();
                    let (train, dev) = train_dev(portion, cv)?;
                    let shared = shared_unigrams(&texts(&train), &texts(&test), &STOPWORDS);
                    if !shared.is_empty() {
                        return Err(TrainError::SplitOverlap(shared));
                    }
                    out.push((fold, seed, Split {
                        train,
                        dev,
                        test: test.clone(),
                    }));
                }
            }
        }
    }
    Ok(out)
}

fn examples(items: &[CvItem]) -> Vec<TrainingExample> {
    items.iter().map(|i| i.example.clone()).collect()
}

/// Finetunes a copy of `base` once per (seed, fold) and scores each selected
/// checkpoint on its test split. The pool is put in canonical order first, so
/// the report does not depend on the input order.
pub fn cross_validate(base: &Model, data: &CvData, task: Task, cv: &CvConfig, cfg: &TrainConfig) -> Result<CvReport> {
    if cv.k < 2 {
        return Err(TrainError::Config("k must be at least 2".into()));
    }
    if cv.seeds.is_empty() {
        return Err(TrainError::Config("at least one seed is required".into()));
    }
    let splits = make_splits(data, cv)?;
    let mut runs = Vec::with_capacity(splits.len());
    for (fold, seed, split) in splits {
        let run_seed = derive_seed(seed, fold as u64);
        let mut model = base.clone();
        if cv.reset_head {
            model.reset_heads(&HeadSet::new(&[task.head()]), run_seed);
        }
        let run_cfg = TrainConfig {
            seed: run_seed,
            ..cfg.clone()
        };
        let out = finetune(model, &examples(&split.train), &examples(&split.dev), task, &run_cfg)?;
        let test = evaluate(&out.model, &examples(&split.test), task)?;
        runs.push(RunRecord {
            fold,
            seed,
            train_size: split.train.len(),
            dev_size: split.dev.len(),
            best_epoch: out.best_epoch,
            best_accuracy_epoch: out.best_accuracy_epoch,
            dev_perplexity: out.best().dev.perplexity,
            test,
        });
    }
    Ok(CvReport::from_runs(task, cv.mode, cv.k, cv.seeds.clone(), runs))
}
