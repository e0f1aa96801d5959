use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::metrics::{evaluate_features, features, Metrics};
use super::pretrain::train_step;
use super::{Result, Task, TrainConfig, TrainError};
use crate::datagen::{HeadSet, TrainingExample};
use crate::derive_seed;
use crate::model::{Model, Scope};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Metrics,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    /// Parameters after the epoch with the lowest dev perplexity.
    pub model: Model,
    pub best_epoch: usize,
    /// Epoch with the highest dev accuracy, logged for comparison.
    pub best_accuracy_epoch: usize,
    pub epochs: Vec<EpochLog>,
}

impl FinetuneOutcome {
    pub fn best(&self) -> &EpochLog {
        &self.epochs[self.best_epoch - 1]
    }
}

#[derive(Debug, Clone)]
pub struct MultitaskOutcome {
    pub ct: FinetuneOutcome,
    pub ad: FinetuneOutcome,
}

fn labeled(set: &[TrainingExample], task: Task, what: &'static str) -> Result<Vec<TrainingExample>> {
    let v: Vec<TrainingExample> = set.iter().filter(|e| e.has_labels_for(task.head())).cloned().collect();
    if v.is_empty() {
        return Err(TrainError::Empty(what));
    }
    Ok(v)
}

/// Selection state for one task: keeps the model of the minimum-perplexity
/// epoch (earliest on ties).
struct Selector {
    best: Option<(f64, usize, Model)>,
    best_acc: (f64, usize),
    epochs: Vec<EpochLog>,
}

impl Selector {
    fn new() -> Self {
        Selector {
            best: None,
            best_acc: (f64::NEG_INFINITY, 0),
            epochs: Vec::new(),
        }
    }

    fn record(&mut self, model: &Model, epoch: usize, train_loss: f64, dev: Metrics) -> Result<()> {
        if !dev.perplexity.is_finite() {
            return Err(TrainError::NonFiniteDev(epoch));
        }
        if self.best.as_ref().is_none_or(|b| dev.perplexity < b.0) {
            self.best = Some((dev.perplexity, epoch, model.clone()));
        }
        if dev.accuracy > self.best_acc.0 {
            self.best_acc = (dev.accuracy, epoch);
        }
        self.epochs.push(EpochLog { epoch, train_loss, dev });
        Ok(())
    }

    fn finish(self, fallback: Model) -> FinetuneOutcome {
        let (model, best_epoch) = match self.best {
            Some((_, e, m)) => (m, e),
            None => (fallback, 0),
        };
        FinetuneOutcome {
            model,
            best_epoch,
            best_accuracy_epoch: self.best_acc.1,
            epochs: self.epochs,
        }
    }
}

/// With only the prediction layers open the encoder is fixed, so its outputs
/// are computed once (in evaluation mode) and reused every epoch.
struct Cache {
    frozen: bool,
    train: Vec<Tensor>,
    dev: Vec<Tensor>,
}

impl Cache {
    fn new(model: &Model, scope: Scope, train: &[TrainingExample], dev: &[TrainingExample]) -> Result<Cache> {
        let frozen = scope == Scope::Pred;
        Ok(Cache {
            frozen,
            train: if frozen { features(model, train)? } else { Vec::new() },
            dev: if frozen { features(model, dev)? } else { Vec::new() },
        })
    }

    fn batch(&self, idx: &[usize]) -> Option<Vec<&Tensor>> {
        self.frozen.then(|| idx.iter().map(|&i| &self.train[i]).collect())
    }

    fn evaluate(&self, model: &Model, dev: &[TrainingExample], task: Task) -> Result<Metrics> {
        if self.frozen {
            evaluate_features(model, dev, &self.dev, task)
        } else {
            evaluate_features(model, dev, &features(model, dev)?, task)
        }
    }
}

fn check(cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Err(TrainError::Config("epochs must be at least 1".into()));
    }
    Ok(())
}

/// Trains the task head (and whatever else `cfg.scope` opens) for
/// `cfg.epochs` passes over `train`, evaluating dev perplexity after each
/// pass, and returns the parameters of the lowest-perplexity epoch.
pub fn finetune(
    mut model: Model,
    train: &[TrainingExample],
    dev: &[TrainingExample],
    task: Task,
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    check(cfg)?;
    let train = labeled(train, task, "training set")?;
    let dev = labeled(dev, task, "dev set")?;
    model.set_dropout(cfg.dropout);
    model.apply_scope(cfg.scope);
    let heads = HeadSet::new(&[task.head()]);
    let cache = Cache::new(&model, cfg.scope, &train, &dev)?;
    let mut state = AdamState::new(model.params());
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut sel = Selector::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut loss = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainingExample> = idx.iter().map(|&i| train[i].clone()).collect();
            let feats = cache.batch(idx);
            let l = train_step(&mut model, &batch, feats.as_deref(), &heads, &mut state, cfg, &mut drop_rng)?;
            loss += l[&task.head()];
            batches += 1;
        }
        let m = cache.evaluate(&model, &dev, task)?;
        sel.record(&model, epoch, loss / batches as f64, m)?;
    }
    Ok(sel.finish(model))
}

/// Joint CT/AD finetuning: each epoch alternates CT and AD batches (one
/// optimizer step per batch, one shared optimizer), then each task keeps its
/// own best-perplexity checkpoint.
pub fn finetune_multitask(
    mut model: Model,
    ct: (&[TrainingExample], &[TrainingExample]),
    ad: (&[TrainingExample], &[TrainingExample]),
    cfg: &TrainConfig,
) -> Result<MultitaskOutcome> {
    check(cfg)?;
    let sets = [
        (Task::Ct, labeled(ct.0, Task::Ct, "CT training set")?, labeled(ct.1, Task::Ct, "CT dev set")?),
        (Task::Ad, labeled(ad.0, Task::Ad, "AD training set")?, labeled(ad.1, Task::Ad, "AD dev set")?),
    ];
    model.set_dropout(cfg.dropout);
    model.apply_scope(cfg.scope);
    let caches = sets
        .iter()
        .map(|(_, train, dev)| Cache::new(&model, cfg.scope, train, dev))
        .collect::<Result<Vec<_>>>()?;
    let mut state = AdamState::new(model.params());
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let mut orders: Vec<Vec<usize>> = sets.iter().map(|s| (0..s.1.len()).collect()).collect();
    let mut sels = [Selector::new(), Selector::new()];
    for epoch in 1..=cfg.epochs {
        for o in &mut orders {
            o.shuffle(&mut order_rng);
        }
        let chunked: Vec<Vec<&[usize]>> = orders.iter().map(|o| o.chunks(cfg.batch_size).collect()).collect();
        let rounds = chunked.iter().map(Vec::len).max().unwrap_or(0);
        let mut loss = [0.0; 2];
        let mut batches = [0usize; 2];
        for r in 0..rounds {
            for (t, (task, train, _)) in sets.iter().enumerate() {
                let Some(idx) = chunked[t].get(r) else { continue };
                let batch: Vec<TrainingExample> = idx.iter().map(|&i| train[i].clone()).collect();
                let heads = HeadSet::new(&[task.head()]);
                let feats = caches[t].batch(idx);
                let l = train_step(&mut model, &batch, feats.as_deref(), &heads, &mut state, cfg, &mut drop_rng)?;
                loss[t] += l[&task.head()];
                batches[t] += 1;
            }
        }
        for (t, (task, _, dev)) in sets.iter().enumerate() {
            let m = caches[t].evaluate(&model, dev, *task)?;
            sels[t].record(&model, epoch, loss[t] / batches[t] as f64, m)?;
        }
    }
    let [ct_sel, ad_sel] = sels;
    Ok(MultitaskOutcome {
        ct: ct_sel.finish(model.clone()),
        ad: ad_sel.finish(model),
    })
}
