use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::{objective_heads, Objective, Result, TrainConfig, TrainError};
use crate::datagen::{
    encode_ad, encode_hyp, encode_mlm_nsp, gen_pad_example, make_nsp_pair, token_frequencies, Chunk, DataError,
    Document, Head, HeadSet, MaskConfig, Segmentation, StreamTag, TrainingExample,
};
use crate::derive_seed;
use crate::model::{Model, Scope};
use crate::tensor::Tensor;
use crate::tokenizer::{segment_viterbi, Vocab};

/// Steps per loss-log window.
const LOG_WINDOW: usize = 10;

fn default_chunk_words() -> usize {
    12
}
fn default_max_seq_len() -> usize {
    64
}
fn default_alpha() -> f64 {
    0.2
}

/// How pretraining examples are cut and encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainOptions {
    /// Word budget of one chunk (a sentence-pair half, a link example, a PAD snippet).
    #[serde(default = "default_chunk_words")]
    pub chunk_words: usize,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
    /// Smoothing exponent for sampled segmentation of web text.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub mask: MaskConfig,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        PretrainOptions {
            chunk_words: default_chunk_words(),
            max_seq_len: default_max_seq_len(),
            alpha: default_alpha(),
            mask: MaskConfig::default(),
            seed: 0,
        }
    }
}

/// Chunked documents plus the pre-generated link and pseudo-acronym pools.
/// Sentence pairs for MLM/NSP are drawn on the fly.
#[derive(Debug, Clone)]
pub struct PretrainCorpus {
    pub vocab: Vocab,
    pub options: PretrainOptions,
    pub chunks: Vec<Vec<Chunk>>,
    pub streams: Vec<StreamTag>,
    pub freqs: Vec<u64>,
    pub hyp: Vec<TrainingExample>,
    pub pad: Vec<TrainingExample>,
}

impl PretrainCorpus {
    pub fn build(docs: &[Document], vocab: Vocab, options: PretrainOptions) -> Result<Self> {
        let chunks: Vec<Vec<Chunk>> = docs.iter().map(|d| d.chunks(options.chunk_words)).collect();
        let streams: Vec<StreamTag> = docs.iter().map(|d| d.stream).collect();
        let mut seqs = Vec::new();
        for d in docs {
            seqs.push(segment_viterbi(&d.plain, &vocab)?.ids);
        }
        let freqs = token_frequencies(seqs.iter().map(Vec::as_slice), vocab.len());
        let max_len = options.max_seq_len;

        let mut hyp = Vec::new();
        for (doc, s) in chunks.iter().zip(&streams) {
            if *s == StreamTag::Wiki {
                for c in doc {
                    hyp.push(encode_hyp(c, &vocab, max_len)?);
                }
            }
        }

        let flat: Vec<(usize, &Chunk)> = chunks
            .iter()
            .enumerate()
            .flat_map(|(d, cs)| cs.iter().map(move |c| (d, c)))
            .collect();
        let mut pad = Vec::new();
        if docs.len() >= 2 {
            for (i, &(d, c)) in flat.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(options.seed, i as u64));
                let other = loop {
                    let (od, oc) = flat[rng.random_range(0..flat.len())];
                    if od != d {
                        break oc;
                    }
                };
                let pair = match gen_pad_example(&c.text, &other.text, &mut rng) {
                    Ok(p) => p,
                    Err(DataError::ChunkTooShort { .. }) | Err(DataError::RejectionLimit(_)) => continue,
                    Err(e) => return Err(e.into()),
                };
                for ex in [&pair.positive, &pair.negative] {
                    pad.push(encode_ad(ex, &vocab, max_len, Segmentation::Viterbi, &mut rng)?);
                }
            }
        }
        Ok(PretrainCorpus {
            vocab,
            options,
            chunks,
            streams,
            freqs,
            hyp,
            pad,
        })
    }

    fn sentence_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TrainingExample> {
        let pair = make_nsp_pair(&self.chunks, rng)?;
        let seg = match self.streams[pair.a.0] {
            StreamTag::Wiki => Segmentation::Viterbi,
            StreamTag::Web => Segmentation::Sampled {
                alpha: self.options.alpha,
            },
        };
        let a = &self.chunks[pair.a.0][pair.a.1].text;
        let b = &self.chunks[pair.b.0][pair.b.1].text;
        Ok(encode_mlm_nsp(
            a,
            b,
            pair.label,
            &self.vocab,
            &self.freqs,
            &self.options.mask,
            self.options.max_seq_len,
            seg,
            rng,
        )?)
    }
}

/// Mean loss of one objective over a window of steps ending at `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub objective: Objective,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: Model,
    pub log: Vec<LossRecord>,
    pub steps: usize,
    pub examples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bucket {
    SentencePair,
    Link,
    Acronym,
}

/// Walks a pool in shuffled passes.
struct Cycle {
    order: Vec<usize>,
    pos: usize,
}

impl Cycle {
    fn new(n: usize) -> Self {
        Cycle {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Parameters updated by a step on `heads`: every trainable tensor outside
/// the heads, plus those of the supervised heads.
pub(crate) fn active_mask(model: &Model, heads: &HeadSet) -> Vec<bool> {
    model
        .params()
        .iter()
        .zip(model.info())
        .map(|(t, i)| t.requires_grad() && i.head.is_none_or(|h| heads.contains(h)))
        .collect()
}

pub(crate) fn train_step<R: Rng + ?Sized>(
    model: &mut Model,
    batch: &[TrainingExample],
    features: Option<&[&Tensor]>,
    heads: &HeadSet,
    state: &mut AdamState,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<BTreeMap<Head, f64>> {
    model.zero_grad();
    let fwd = match features {
        Some(f) => model.forward_features(batch, f, heads)?,
        None => model.forward(batch, heads, Some(rng))?,
    };
    fwd.backward(model)?;
    let active = active_mask(model, heads);
    adam_step(model.params_mut(), state, &cfg.adam(), &active).map_err(|e| match e {
        TrainError::NonFiniteGradient(m) => TrainError::NonFiniteGradient(alloc::format!("{m} ({heads:?})")),
        e => e,
    })?;
    Ok(fwd.outputs.losses)
}

/// Multitask pretraining for `cfg.steps` optimizer steps of `cfg.batch_size`
/// examples each. Steps cycle through the batch sources the objectives need
/// (sentence pairs for MLM/NSP, link examples for HYP, acronym pairs for PAD),
/// so the example budget is the same for every objective set. All parameter
/// groups are trained.
pub fn pretrain(mut model: Model, corpus: &PretrainCorpus, cfg: &TrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if cfg.objectives.is_empty() {
        return Err(TrainError::NoObjectives);
    }
    let wanted = objective_heads(&cfg.objectives);
    let mut buckets = Vec::new();
    if wanted.contains(Head::Mlm) || wanted.contains(Head::Nsp) {
        buckets.push(Bucket::SentencePair);
    }
    if wanted.contains(Head::Boundary) {
        if corpus.hyp.is_empty() {
            return Err(TrainError::Empty("link example pool"));
        }
        buckets.push(Bucket::Link);
    }
    if wanted.contains(Head::Pad) {
        if corpus.pad.is_empty() {
            return Err(TrainError::Empty("acronym pair pool"));
        }
        buckets.push(Bucket::Acronym);
    }
    model.set_dropout(cfg.dropout);
    model.apply_scope(Scope::PredTrmEmb);
    let mut state = AdamState::new(model.params());
    let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let mut link_cycle = Cycle::new(corpus.hyp.len());
    let mut pad_cycle = Cycle::new(corpus.pad.len());

    let mut log = Vec::new();
    let mut window: BTreeMap<Objective, (f64, usize)> = BTreeMap::new();
    let mut examples = 0;
    for step in 0..cfg.steps {
        let bucket = buckets[step % buckets.len()];
        let batch: Vec<TrainingExample> = match bucket {
            Bucket::SentencePair => (0..cfg.batch_size)
                .map(|_| corpus.sentence_pair(&mut data_rng))
                .collect::<Result<_>>()?,
            Bucket::Link => (0..cfg.batch_size)
                .map(|_| corpus.hyp[link_cycle.next(&mut data_rng)].clone())
                .collect(),
            Bucket::Acronym => (0..cfg.batch_size)
                .map(|_| corpus.pad[pad_cycle.next(&mut data_rng)].clone())
                .collect(),
        };
        examples += batch.len();
        let heads: Vec<Head> = wanted
            .iter()
            .filter(|&h| match bucket {
                Bucket::SentencePair => matches!(h, Head::Mlm | Head::Nsp),
                Bucket::Link => h == Head::Boundary,
                Bucket::Acronym => h == Head::Pad,
            })
            .filter(|&h| batch.iter().any(|e| e.has_labels_for(h)))
            .collect();
        if !heads.is_empty() {
            let losses = train_step(&mut model, &batch, None, &HeadSet::new(&heads), &mut state, cfg, &mut drop_rng)?;
            for (h, l) in losses {
                let w = window.entry(Objective::from_head(h)).or_insert((0.0, 0));
                w.0 += l;
                w.1 += 1;
            }
        }
        if (step + 1) % LOG_WINDOW == 0 || step + 1 == cfg.steps {
            for (objective, (sum, n)) in core::mem::take(&mut window) {
                log.push(LossRecord {
                    step: step + 1,
                    objective,
                    loss: sum / n as f64,
                });
            }
        }
    }
    Ok(PretrainOutcome {
        model,
        log,
        steps: cfg.steps,
        examples,
    })
}
