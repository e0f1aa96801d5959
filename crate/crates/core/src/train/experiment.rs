use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cv::{cross_validate, CvConfig, CvData, CvItem, CvReport, SplitMode};
use super::pretrain::{pretrain, LossRecord, PretrainCorpus, PretrainOptions};
use super::{Objective, Result, Task, TrainConfig, TrainError};
use crate::datagen::{
    encode_ad, encode_ct, gen_ad_dataset, gen_ct_datasets, gen_synthetic_corpus, parse_markup, Document, Lexicon,
    Segmentation, StreamTag, SyntheticCorpus, SyntheticParams,
};
use crate::derive_seed;
use crate::model::{init_model, Model, ModelConfig};
use crate::tokenizer::{build_vocab, Vocab};

/// One pretraining variant. `steps` and `sizes` override the shared settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub name: String,
    pub objectives: Vec<Objective>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub sizes: Option<Vec<usize>>,
}

fn default_vocab_size() -> usize {
    2000
}
fn default_ct_pool() -> usize {
    275
}
fn default_ct_test() -> usize {
    200
}
fn default_ad_snippets() -> usize {
    150
}
fn default_task() -> Task {
    Task::Ct
}
fn default_sizes() -> Vec<usize> {
    alloc::vec![50]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub corpus: SyntheticParams,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    /// Encoder shape; `vocab_size` is replaced by the size of the built vocabulary.
    pub model: ModelConfig,
    #[serde(default)]
    pub data: PretrainOptions,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub cv: CvConfig,
    #[serde(default = "default_task")]
    pub task: Task,
    #[serde(default = "default_ct_pool")]
    pub ct_pool: usize,
    #[serde(default = "default_ct_test")]
    pub ct_test: usize,
    #[serde(default = "default_ad_snippets")]
    pub ad_snippets: usize,
    pub arms: Vec<Arm>,
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    /// Seed of the shared initial weights and of the finetuning datasets.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub size: usize,
    pub report: CvReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmResult {
    pub name: String,
    pub objectives: Vec<Objective>,
    pub steps: usize,
    pub examples: usize,
    pub loss_log: Vec<LossRecord>,
    pub sizes: Vec<SizeReport>,
    #[serde(skip)]
    pub model: Option<Model>,
}

/// Mean test-accuracy difference `a - b` at one finetuning size, with the
/// pooled standard deviation `sqrt((sd_a^2 + sd_b^2) / 2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiff {
    pub size: usize,
    pub a: String,
    pub b: String,
    pub mean_diff: f64,
    pub pooled_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub task: Task,
    pub vocab_size: usize,
    pub corpus_tokens: usize,
    pub arms: Vec<ArmResult>,
    pub diffs: Vec<PairDiff>,
}

impl ExperimentReport {
    pub fn arm(&self, name: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.name == name)
    }

    pub fn diff(&self, a: &str, b: &str, size: usize) -> Option<&PairDiff> {
        self.diffs.iter().find(|d| d.a == a && d.b == b && d.size == size)
    }
}

/// Parsed synthetic documents, wiki stream first.
pub fn corpus_documents(corpus: &SyntheticCorpus) -> Result<Vec<Document>> {
    let mut docs = Vec::with_capacity(corpus.wiki.len() + corpus.web.len());
    for raw in &corpus.wiki {
        docs.push(parse_markup(raw, StreamTag::Wiki)?);
    }
    for raw in &corpus.web {
        docs.push(parse_markup(raw, StreamTag::Web)?);
    }
    Ok(docs)
}

/// Encoded CT pool and held-out test set.
pub fn ct_cv_data(lex: &Lexicon, vocab: &Vocab, n_pool: usize, n_test: usize, seed: u64, max_len: usize) -> Result<CvData> {
    let (pool, test) = gen_ct_datasets(lex, n_pool, n_test, seed)?;
    let enc = |set: Vec<crate::datagen::CtExample>| -> Result<Vec<CvItem>> {
        set.into_iter()
            .map(|ex| {
                Ok(CvItem {
                    example: encode_ct(&ex, vocab, max_len)?,
                    text: ex.query,
                })
            })
            .collect()
    };
    Ok(CvData {
        pool: enc(pool)?,
        test: enc(test)?,
    })
}

/// Encoded AD pool (`2 * n_snippets` balanced records).
pub fn ad_cv_data(lex: &Lexicon, vocab: &Vocab, n_snippets: usize, seed: u64, max_len: usize) -> Result<CvData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = gen_ad_dataset(lex, n_snippets, seed)?
        .into_iter()
        .map(|ex| {
            Ok(CvItem {
                example: encode_ad(&ex, vocab, max_len, Segmentation::Viterbi, &mut rng)?,
                text: format!("{} {}", ex.acronym, ex.snippet),
            })
        })
        .collect::<Result<_>>()?;
    Ok(CvData { pool, test: Vec::new() })
}

/// Pretrains one model per arm from shared initial weights on a shared
/// synthetic corpus, then cross-validates each on the finetuning task at
/// every size. `progress` receives a line per completed stage.
pub fn run_alignment_experiment(cfg: &ExperimentConfig, progress: &mut dyn FnMut(&str)) -> Result<ExperimentReport> {
    if cfg.arms.len() < 2 {
        return Err(TrainError::Config("the experiment needs at least two arms".into()));
    }
    let budgets: Vec<usize> = cfg.arms.iter().map(|a| a.steps.unwrap_or(cfg.pretrain.steps)).collect();
    if budgets.iter().any(|&b| b != budgets[0]) {
        return Err(TrainError::BudgetMismatch(budgets));
    }
    let corpus = gen_synthetic_corpus(&cfg.corpus)?;
    let docs = corpus_documents(&corpus)?;
    let vocab = build_vocab(docs.iter().map(|d| d.plain.as_str()), cfg.vocab_size)?;
    let pre = PretrainCorpus::build(&docs, vocab.clone(), cfg.data.clone())?;
    let corpus_tokens = pre.freqs.iter().sum::<u64>() as usize;
    progress(&format!(
        "corpus: {} documents, {corpus_tokens} tokens, vocab {}, {} link / {} acronym examples",
        docs.len(),
        vocab.len(),
        pre.hyp.len(),
        pre.pad.len()
    ));
    let max_len = cfg.data.max_seq_len;
    let data = match cfg.task {
        Task::Ct => ct_cv_data(&corpus.lexicon, &vocab, cfg.ct_pool, cfg.ct_test, derive_seed(cfg.seed, 11), max_len)?,
        Task::Ad => ad_cv_data(&corpus.lexicon, &vocab, cfg.ad_snippets, derive_seed(cfg.seed, 12), max_len)?,
    };
    let model_cfg = ModelConfig {
        vocab_size: vocab.len(),
        max_seq_len: cfg.model.max_seq_len.max(max_len),
        ..cfg.model.clone()
    };
    let base = init_model(&model_cfg, cfg.seed)?;

    let mut arms = Vec::new();
    for (arm, &steps) in cfg.arms.iter().zip(&budgets) {
        let pcfg = TrainConfig {
            steps,
            objectives: arm.objectives.clone(),
            ..cfg.pretrain.clone()
        };
        let out = pretrain(base.clone(), &pre, &pcfg)?;
        progress(&format!("{}: pretrained {} steps / {} examples", arm.name, out.steps, out.examples));
        let mut sizes = Vec::new();
        for &size in arm.sizes.as_ref().unwrap_or(&cfg.sizes) {
            let cv = CvConfig {
                train_size: Some(size),
                mode: match cfg.task {
                    Task::Ct => cfg.cv.mode,
                    Task::Ad => SplitMode::Standard,
                },
                ..cfg.cv.clone()
            };
            let report = cross_validate(&out.model, &data, cfg.task, &cv, &cfg.finetune)?;
            progress(&format!(
                "{}: size {size}: accuracy {:.4} +- {:.4}, perplexity {:.4} +- {:.4}",
                arm.name, report.aggregate.accuracy.mean, report.aggregate.accuracy.std, report.aggregate.perplexity.mean, report.aggregate.perplexity.std
            ));
            sizes.push(SizeReport { size, report });
        }
        arms.push(ArmResult {
            name: arm.name.clone(),
            objectives: arm.objectives.clone(),
            steps: out.steps,
            examples: out.examples,
            loss_log: out.log,
            sizes,
            model: Some(out.model),
        });
    }
    let diffs = pairwise_diffs(&arms);
    Ok(ExperimentReport {
        task: cfg.task,
        vocab_size: vocab.len(),
        corpus_tokens,
        arms,
        diffs,
    })
}

/// Mean accuracy differences for every ordered pair of arms (including each
/// arm with itself) at every size both arms were evaluated at.
pub fn pairwise_diffs(arms: &[ArmResult]) -> Vec<PairDiff> {
    let mut out = Vec::new();
    for a in arms {
        for b in arms {
            for sa in &a.sizes {
                let Some(sb) = b.sizes.iter().find(|s| s.size == sa.size) else {
                    continue;
                };
                let (ra, rb) = (&sa.report.aggregate.accuracy, &sb.report.aggregate.accuracy);
                out.push(PairDiff {
                    size: sa.size,
                    a: a.name.clone(),
                    b: b.name.clone(),
                    mean_diff: ra.mean - rb.mean,
                    pooled_std: libm::sqrt((ra.std * ra.std + rb.std * rb.std) / 2.0),
                });
            }
        }
    }
    out
}
