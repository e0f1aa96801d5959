//! Run configuration: one JSON document with sections for every stage, plus
//! the input paths and the master seed. Unknown keys are rejected, missing
//! keys take defaults, and the resolved document is written next to every
//! run's outputs so the run can be replayed from it.

use fel_core::datagen::SyntheticParams;
use fel_core::derive_seed;
use fel_core::model::ModelConfig;
use fel_core::train::{Arm, CvConfig, ExperimentConfig, Objective, PretrainOptions, SplitMode, Task, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSection {
    pub vocab_size: usize,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        TokenizerSection { vocab_size: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Synthetic corpus used when no corpus file is given.
    pub corpus: SyntheticParams,
    /// Chunking, segmentation and masking of pretraining examples.
    pub encoding: PretrainOptions,
    pub ct_pool: usize,
    pub ct_test: usize,
    pub ad_snippets: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            corpus: SyntheticParams::default(),
            encoding: PretrainOptions::default(),
            ct_pool: 275,
            ct_test: 200,
            ad_snippets: 150,
        }
    }
}

/// Encoder shape. `vocab_size` is taken from the vocabulary when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub emb_dim: usize,
    pub n_layers: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: Option<usize>,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub type_vocab: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            emb_dim: 64,
            n_layers: 2,
            head_dim: 32,
            ffn_dim: 256,
            vocab_size: None,
            max_seq_len: 64,
            dropout: 0.1,
            type_vocab: 2,
        }
    }
}

impl ModelSection {
    pub fn to_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            emb_dim: self.emb_dim,
            n_layers: self.n_layers,
            head_dim: self.head_dim,
            ffn_dim: self.ffn_dim,
            vocab_size,
            max_seq_len: self.max_seq_len,
            dropout: self.dropout,
            type_vocab: self.type_vocab,
        }
    }
}

fn default_arms() -> Vec<Arm> {
    vec![
        Arm {
            name: String::from("aligned"),
            objectives: Objective::ALL.to_vec(),
            steps: None,
            sizes: None,
        },
        Arm {
            name: String::from("base"),
            objectives: vec![Objective::Mlm, Objective::Nsp],
            steps: None,
            sizes: None,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub task: Task,
    pub arms: Vec<Arm>,
    pub sizes: Vec<usize>,
    pub cv: CvConfig,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            task: Task::Ct,
            arms: default_arms(),
            sizes: vec![50],
            cv: CvConfig::new(SplitMode::CtDisjoint),
        }
    }
}

/// Input files. Paths are stored as given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Inputs {
    /// Blank-line-separated documents with `[[...]]` link markup.
    pub corpus: Option<String>,
    pub vocab: Option<String>,
    pub checkpoint: Option<String>,
    pub train: Option<String>,
    pub test: Option<String>,
}

/// The `seed` keys inside sections are derived from `master_seed` when the
/// config is resolved, so a resolved config replays exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub tokenizer: TokenizerSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default = "TrainConfig::pretraining")]
    pub pretrain: TrainConfig,
    #[serde(default = "TrainConfig::finetuning")]
    pub finetune: TrainConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub inputs: Inputs,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: 0,
            tokenizer: TokenizerSection::default(),
            data: DataSection::default(),
            model: ModelSection::default(),
            pretrain: TrainConfig::pretraining(),
            finetune: TrainConfig::finetuning(),
            experiment: ExperimentSection::default(),
            inputs: Inputs::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Fills every derived seed from `master_seed`. Idempotent.
    pub fn resolve(mut self) -> RunConfig {
        let m = self.master_seed;
        self.data.corpus.seed = m;
        self.data.encoding.seed = derive_seed(m, 1);
        self.pretrain.seed = derive_seed(m, 2);
        self.finetune.seed = derive_seed(m, 3);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        self.pretrain.validate().map_err(|e| format!("pretrain: {e}"))?;
        self.finetune.validate().map_err(|e| format!("finetune: {e}"))?;
        if self.tokenizer.vocab_size == 0 {
            return Err(String::from("tokenizer.vocab_size must be positive"));
        }
        if self.model.max_seq_len < self.data.encoding.max_seq_len {
            return Err(format!(
                "model.max_seq_len {} is below data.encoding.max_seq_len {}",
                self.model.max_seq_len, self.data.encoding.max_seq_len
            ));
        }
        if self.experiment.arms.iter().any(|a| a.objectives.is_empty()) {
            return Err(String::from("every experiment arm needs at least one objective"));
        }
        Ok(())
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            corpus: self.data.corpus.clone(),
            vocab_size: self.tokenizer.vocab_size,
            model: self.model.to_config(self.model.vocab_size.unwrap_or(0)),
            data: self.data.encoding.clone(),
            pretrain: self.pretrain.clone(),
            finetune: self.finetune.clone(),
            cv: self.experiment.cv.clone(),
            task: self.experiment.task,
            ct_pool: self.data.ct_pool,
            ct_test: self.data.ct_test,
            ad_snippets: self.data.ad_snippets,
            arms: self.experiment.arms.clone(),
            sizes: self.experiment.sizes.clone(),
            seed: self.master_seed,
        }
    }
}
