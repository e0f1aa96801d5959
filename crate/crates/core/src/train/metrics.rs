use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Result, Task, TrainError};
use crate::datagen::{HeadSet, TrainingExample};
use crate::model::Model;
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 64;

/// Accuracy and perplexity over the supervised labels of a dataset.
/// `confusion[gold][predicted]` counts labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub perplexity: f64,
    pub mean_nll: f64,
    pub n_examples: usize,
    pub n_labels: usize,
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Debug, Clone)]
struct Accumulator {
    nll: f64,
    correct: usize,
    labels: usize,
    confusion: Vec<Vec<u64>>,
}

impl Accumulator {
    fn new(classes: usize) -> Self {
        Accumulator {
            nll: 0.0,
            correct: 0,
            labels: 0,
            confusion: vec![vec![0; classes]; classes],
        }
    }

    fn add(&mut self, logits: &[f64], targets: &[Option<usize>]) -> Result<()> {
        let c = self.confusion.len();
        if logits.len() != targets.len() * c {
            return Err(TrainError::Config(alloc::format!(
                "{} logits for {} rows of {c} classes",
                logits.len(),
                targets.len()
            )));
        }
        for (row, t) in logits.chunks_exact(c).zip(targets) {
            let Some(t) = *t else { continue };
            if t >= c {
                return Err(TrainError::Config(alloc::format!("label {t} outside {c} classes")));
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&x| libm::exp(x - max)).sum();
            self.nll += libm::log(z) + max - row[t];
            let mut pred = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[pred] {
                    pred = j;
                }
            }
            self.correct += usize::from(pred == t);
            self.confusion[t][pred] += 1;
            self.labels += 1;
        }
        Ok(())
    }

    fn finish(self, n_examples: usize) -> Result<Metrics> {
        if self.labels == 0 {
            return Err(TrainError::NoLabels);
        }
        let mean_nll = self.nll / self.labels as f64;
        Ok(Metrics {
            accuracy: self.correct as f64 / self.labels as f64,
            perplexity: libm::exp(mean_nll),
            mean_nll,
            n_examples,
            n_labels: self.labels,
            confusion: self.confusion,
        })
    }
}

/// Metrics for row-major `logits` (`classes` per row) against optional targets.
/// Ties in the arg-max go to the lowest class.
pub fn metrics_from_logits(logits: &[f64], targets: &[Option<usize>], classes: usize, n_examples: usize) -> Result<Metrics> {
    let mut acc = Accumulator::new(classes);
    acc.add(logits, targets)?;
    acc.finish(n_examples)
}

/// Evaluation-mode metrics of the task head. CT scores every labeled token,
/// Encoder outputs of each example, computed one example at a time so they
/// do not depend on batch composition.
pub(crate) fn features(model: &Model, set: &[TrainingExample]) -> Result<Vec<Tensor>> {
    Ok(set.iter().map(|ex| model.example_features(ex)).collect::<Result<_, _>>()?)
}

/// Scores `model` on the examples of `dataset` that carry labels for the
/// task head. Each example is encoded on its own, so the result does not
/// depend on dataset order.
pub fn evaluate(model: &Model, dataset: &[TrainingExample], task: Task) -> Result<Metrics> {
    let head = task.head();
    let labeled: Vec<TrainingExample> = dataset.iter().filter(|e| e.has_labels_for(head)).cloned().collect();
    if labeled.is_empty() {
        return Err(TrainError::NoLabels);
    }
    let feats = features(model, &labeled)?;
    evaluate_features(model, &labeled, &feats, task)
}

/// `evaluate` on labeled examples with precomputed features.
pub(crate) fn evaluate_features(model: &Model, labeled: &[TrainingExample], feats: &[Tensor], task: Task) -> Result<Metrics> {
    let head = task.head();
    let heads = HeadSet::new(&[head]);
    let mut acc = Accumulator::new(task.classes());
    for (batch, f) in labeled.chunks(EVAL_BATCH).zip(feats.chunks(EVAL_BATCH)) {
        let refs: Vec<&Tensor> = f.iter().collect();
        let out = model.forward_features(batch, &refs, &heads)?.outputs;
        acc.add(out.logits[&head].data(), &out.targets[&head])?;
    }
    acc.finish(labeled.len())
}
