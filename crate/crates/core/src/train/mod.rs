//! Optimization, evaluation and experiment drivers: multitask pretraining,
//! scoped finetuning with perplexity-based selection, cross-validation and the
//! objective-alignment ablation.

mod adam;
mod cv;
mod experiment;
mod finetune;
mod metrics;
mod pretrain;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{DataError, Head, HeadSet};
use crate::model::{ModelError, Scope};
use crate::tokenizer::TokenizerError;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use cv::{cross_validate, Aggregate, CvConfig, CvData, CvItem, CvReport, MeanStd, RunRecord, SplitMode};
pub use experiment::{
    ad_cv_data, corpus_documents, ct_cv_data, pairwise_diffs, run_alignment_experiment, Arm, ArmResult,
    ExperimentConfig, ExperimentReport, PairDiff, SizeReport,
};
pub use finetune::{finetune, finetune_multitask, EpochLog, FinetuneOutcome, MultitaskOutcome};
pub use metrics::{evaluate, metrics_from_logits, Metrics};
pub use pretrain::{pretrain, LossRecord, PretrainCorpus, PretrainOptions, PretrainOutcome};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("non-finite dev perplexity after epoch {0}")]
    NonFiniteDev(usize),
    #[error("empty objective set")]
    NoObjectives,
    #[error("no supervised labels to evaluate")]
    NoLabels,
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("train and test share non-stopword unigrams: {0:?}")]
    SplitOverlap(Vec<String>),
    #[error("arms have mismatched step budgets: {0:?}")]
    BudgetMismatch(Vec<usize>),
}

pub type Result<T, E = TrainError> = core::result::Result<T, E>;

/// Pretraining objective. `Hyp` trains the boundary head on link anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Mlm,
    Nsp,
    Hyp,
    Pad,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Mlm, Objective::Nsp, Objective::Hyp, Objective::Pad];

    pub fn head(self) -> Head {
        match self {
            Objective::Mlm => Head::Mlm,
            Objective::Nsp => Head::Nsp,
            Objective::Hyp => Head::Boundary,
            Objective::Pad => Head::Pad,
        }
    }

    pub fn from_head(h: Head) -> Objective {
        match h {
            Head::Mlm => Objective::Mlm,
            Head::Nsp => Objective::Nsp,
            Head::Boundary => Objective::Hyp,
            Head::Pad => Objective::Pad,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Mlm => "mlm",
            Objective::Nsp => "nsp",
            Objective::Hyp => "hyp",
            Objective::Pad => "pad",
        }
    }

    /// Parses a comma-separated list such as `mlm,nsp,hyp`.
    pub fn parse_list(s: &str) -> Result<Vec<Objective>> {
        let mut out: Vec<Objective> = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl FromStr for Objective {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s.to_ascii_lowercase())
            .ok_or_else(|| TrainError::Config(alloc::format!("unknown objective {s:?}")))
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn objective_heads(objectives: &[Objective]) -> HeadSet {
    HeadSet::new(&objectives.iter().map(|o| o.head()).collect::<Vec<_>>())
}

/// Finetuning task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Concept tagging, scored per token by the boundary head.
    Ct,
    /// Acronym detection, scored per example by the acronym head.
    Ad,
}

impl Task {
    pub fn head(self) -> Head {
        match self {
            Task::Ct => Head::Boundary,
            Task::Ad => Head::Pad,
        }
    }

    pub fn classes(self) -> usize {
        match self {
            Task::Ct => 4,
            Task::Ad => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Ct => "ct",
            Task::Ad => "ad",
        }
    }
}

impl FromStr for Task {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ct" => Ok(Task::Ct),
            "ad" => Ok(Task::Ad),
            _ => Err(TrainError::Config(alloc::format!("unknown task {s:?}; expected ct or ad"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_lr() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    64
}
fn default_dropout() -> f64 {
    0.1
}
fn default_steps() -> usize {
    1000
}
fn default_epochs() -> usize {
    30
}
fn default_scope() -> Scope {
    Scope::Pred
}
fn default_objectives() -> Vec<Objective> {
    Objective::ALL.to_vec()
}

/// Optimizer and schedule settings shared by pretraining and finetuning.
/// Pretraining reads `steps` and `objectives`; finetuning reads `epochs`,
/// `scope` and `multitask_finetune`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scope")]
    pub scope: Scope,
    #[serde(default)]
    pub multitask_finetune: bool,
    #[serde(default = "default_objectives")]
    pub objectives: Vec<Objective>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            batch_size: default_batch(),
            dropout: default_dropout(),
            steps: default_steps(),
            epochs: default_epochs(),
            seed: 0,
            scope: default_scope(),
            multitask_finetune: false,
            objectives: default_objectives(),
        }
    }
}

impl TrainConfig {
    /// Finetuning defaults (batch 64).
    pub fn finetuning() -> Self {
        Self::default()
    }

    /// Pretraining defaults (batch 256, all four objectives, every group trained).
    pub fn pretraining() -> Self {
        TrainConfig {
            batch_size: 256,
            scope: Scope::PredTrmEmb,
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(String::from(m)));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}
