//! BERT-shaped encoder with masked-token, sentence-pair, boundary and
//! acronym heads. Parameters live in one registry; each carries a scope group
//! so finetuning can freeze everything outside the chosen scope.

mod gradcheck;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{BoundaryLabel, Head, HeadSet, TrainingExample};
use crate::derive_seed;
use crate::tensor::{AttentionLayout, Graph, ParamId, Tensor, TensorError, Var};
use crate::tokenizer::PAD;

pub use gradcheck::{grad_check, grad_check_batch};

const LN_EPS: f64 = 1e-12;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("requested head {0:?} has no labels in the batch")]
    MissingLabels(Head),
    #[error("empty batch")]
    EmptyBatch,
    #[error("token id {id} outside vocabulary of {vocab}")]
    BadToken { id: usize, vocab: usize },
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("unknown scope {0:?}; expected pred, pred+trm or pred+trm+emb")]
    UnknownScope(String),
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = ModelError> = core::result::Result<T, E>;

fn default_head_dim() -> usize {
    64
}
fn default_ffn_dim() -> usize {
    3072
}
fn default_max_seq_len() -> usize {
    128
}
fn default_dropout() -> f64 {
    0.1
}
fn default_type_vocab() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub emb_dim: usize,
    pub n_layers: usize,
    #[serde(default = "default_head_dim")]
    pub head_dim: usize,
    #[serde(default = "default_ffn_dim")]
    pub ffn_dim: usize,
    pub vocab_size: usize,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_type_vocab")]
    pub type_vocab: usize,
}

impl ModelConfig {
    pub fn new(emb_dim: usize, n_layers: usize, vocab_size: usize) -> Self {
        ModelConfig {
            emb_dim,
            n_layers,
            head_dim: default_head_dim(),
            ffn_dim: default_ffn_dim(),
            vocab_size,
            max_seq_len: default_max_seq_len(),
            dropout: default_dropout(),
            type_vocab: default_type_vocab(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(ModelError::Config(String::from(m)));
        if self.emb_dim == 0
            || self.n_layers == 0
            || self.head_dim == 0
            || self.ffn_dim == 0
            || self.vocab_size == 0
            || self.max_seq_len == 0
            || self.type_vocab == 0
        {
            return err("all extents must be positive");
        }
        if self.emb_dim % self.head_dim != 0 {
            return Err(ModelError::Config(format!(
                "emb_dim {} is not a multiple of head_dim {}",
                self.emb_dim, self.head_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn n_heads(&self) -> usize {
        self.emb_dim / self.head_dim
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (d, f, v) = (self.emb_dim, self.ffn_dim, self.vocab_size);
        let embedding = (v + self.max_seq_len + self.type_vocab) * d + 2 * d;
        // q, v, o with bias; k without (a key bias cannot change attention weights)
        let layer = 4 * d * d + 3 * d + (d * f + f) + (f * d + d) + 4 * d;
        let mlm = d * d + d + 2 * d + d * v + v;
        let pooled = |c: usize| d * d + d + d * c + c;
        embedding + self.n_layers * layer + mlm + 2 * pooled(2) + pooled(4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Embedding,
    Transformer,
    Head,
}

impl Group {
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(t: u8) -> Option<Group> {
        [Group::Embedding, Group::Transformer, Group::Head].get(t as usize).copied()
    }
}

/// Backpropagation scope for finetuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scope {
    #[serde(rename = "pred")]
    Pred,
    #[serde(rename = "pred+trm")]
    PredTrm,
    #[serde(rename = "pred+trm+emb")]
    PredTrmEmb,
}

impl Scope {
    pub fn includes(self, g: Group) -> bool {
        match self {
            Scope::Pred => g == Group::Head,
            Scope::PredTrm => g != Group::Embedding,
            Scope::PredTrmEmb => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scope::Pred => "pred",
            Scope::PredTrm => "pred+trm",
            Scope::PredTrmEmb => "pred+trm+emb",
        }
    }
}

impl FromStr for Scope {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pred" => Ok(Scope::Pred),
            "pred+trm" => Ok(Scope::PredTrm),
            "pred+trm+emb" => Ok(Scope::PredTrmEmb),
            _ => Err(ModelError::UnknownScope(String::from(s))),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub group: Group,
    /// Head owning this parameter, for the head group.
    pub head: Option<Head>,
    pub shape: Vec<usize>,
    init: Init,
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// `dense -> act -> out` classifier parameters.
#[derive(Debug, Clone, Copy)]
struct HeadIds {
    dense: ParamId,
    dense_b: ParamId,
    ln: Option<(ParamId, ParamId)>,
    out: ParamId,
    out_b: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    tok: ParamId,
    pos: ParamId,
    seg: ParamId,
    emb_ln_g: ParamId,
    emb_ln_b: ParamId,
    layers: Vec<LayerIds>,
    mlm: HeadIds,
    nsp: HeadIds,
    boundary: HeadIds,
    pad: HeadIds,
}

struct Registry {
    info: Vec<ParamInfo>,
}

impl Registry {
    fn add(&mut self, name: String, group: Group, head: Option<Head>, shape: &[usize], init: Init) -> ParamId {
        self.info.push(ParamInfo {
            name,
            group,
            head,
            shape: shape.to_vec(),
            init,
        });
        self.info.len() - 1
    }

    fn head(&mut self, head: Head, d: usize, classes: usize, with_ln: bool) -> HeadIds {
        let n = head.name();
        let g = Group::Head;
        let h = Some(head);
        let dense = self.add(format!("{n}.dense.w"), g, h, &[d, d], Init::Normal);
        let dense_b = self.add(format!("{n}.dense.b"), g, h, &[d], Init::Zeros);
        let ln = with_ln.then(|| {
            (
                self.add(format!("{n}.ln.g"), g, h, &[d], Init::Ones),
                self.add(format!("{n}.ln.b"), g, h, &[d], Init::Zeros),
            )
        });
        let out = self.add(format!("{n}.out.w"), g, h, &[d, classes], Init::Normal);
        let out_b = self.add(format!("{n}.out.b"), g, h, &[classes], Init::Zeros);
        HeadIds {
            dense,
            dense_b,
            ln,
            out,
            out_b,
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<ParamInfo>) {
    let (d, f) = (cfg.emb_dim, cfg.ffn_dim);
    let mut r = Registry { info: Vec::new() };
    let e = Group::Embedding;
    let tok = r.add("emb.token".into(), e, None, &[cfg.vocab_size, d], Init::Normal);
    let pos = r.add("emb.position".into(), e, None, &[cfg.max_seq_len, d], Init::Normal);
    let seg = r.add("emb.segment".into(), e, None, &[cfg.type_vocab, d], Init::Normal);
    let emb_ln_g = r.add("emb.ln.g".into(), e, None, &[d], Init::Ones);
    let emb_ln_b = r.add("emb.ln.b".into(), e, None, &[d], Init::Zeros);
    let t = Group::Transformer;
    let layers = (0..cfg.n_layers)
        .map(|l| {
            let mut p = |name: &str, shape: &[usize], init| r.add(format!("layer{l}.{name}"), t, None, shape, init);
            LayerIds {
                wq: p("attn.q.w", &[d, d], Init::Normal),
                bq: p("attn.q.b", &[d], Init::Zeros),
                wk: p("attn.k.w", &[d, d], Init::Normal),
                wv: p("attn.v.w", &[d, d], Init::Normal),
                bv: p("attn.v.b", &[d], Init::Zeros),
                wo: p("attn.out.w", &[d, d], Init::Normal),
                bo: p("attn.out.b", &[d], Init::Zeros),
                ln1_g: p("attn.ln.g", &[d], Init::Ones),
                ln1_b: p("attn.ln.b", &[d], Init::Zeros),
                w1: p("ffn.in.w", &[d, f], Init::Normal),
                b1: p("ffn.in.b", &[f], Init::Zeros),
                w2: p("ffn.out.w", &[f, d], Init::Normal),
                b2: p("ffn.out.b", &[d], Init::Zeros),
                ln2_g: p("ffn.ln.g", &[d], Init::Ones),
                ln2_b: p("ffn.ln.b", &[d], Init::Zeros),
            }
        })
        .collect();
    let mlm = r.head(Head::Mlm, d, cfg.vocab_size, true);
    let nsp = r.head(Head::Nsp, d, 2, false);
    let boundary = r.head(Head::Boundary, d, 4, false);
    let pad = r.head(Head::Pad, d, 2, false);
    (
        Layout {
            tok,
            pos,
            seg,
            emb_ln_g,
            emb_ln_b,
            layers,
            mlm,
            nsp,
            boundary,
            pad,
        },
        r.info,
    )
}

fn init_tensor<R: Rng + ?Sized>(info: &ParamInfo, rng: &mut R) -> Tensor {
    init_tensor_std(info, INIT_STD, rng)
}

fn init_tensor_std<R: Rng + ?Sized>(info: &ParamInfo, std: f64, rng: &mut R) -> Tensor {
    let n: usize = info.shape.iter().product();
    let data = match info.init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::Normal => {
            let normal = Normal::new(0.0, std).expect("valid std");
            (0..n)
                .map(|_| normal.sample(rng).clamp(-2.0 * std, 2.0 * std))
                .collect()
        }
    };
    let mut t = Tensor::new(&info.shape, data).expect("shape matches data");
    t.set_requires_grad(true);
    t
}

/// Outputs of one forward pass. Logits are present for requested heads:
/// `mlm` is `[masked positions, vocab]`, `nsp`/`pad` are `[batch, 2]`, and
/// `boundary` is `[batch, seq, 4]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub logits: BTreeMap<Head, Tensor>,
    pub losses: BTreeMap<Head, f64>,
    /// Per-head targets aligned with the rows of `logits` (`None` = unsupervised).
    pub targets: BTreeMap<Head, Vec<Option<usize>>>,
    pub total: f64,
}

/// A recorded forward pass ready for backpropagation.
pub struct Forward {
    pub graph: Graph,
    pub loss: Var,
    pub outputs: HeadOutputs,
}

impl Forward {
    pub fn backward(&self, model: &mut Model) -> Result<()> {
        self.graph.backward(self.loss, &mut model.params)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Tensor>,
    info: Vec<ParamInfo>,
    layout: Layout,
}

impl PartialEq for Layout {
    fn eq(&self, _: &Self) -> bool {
        // derived from the config, which is compared separately
        true
    }
}

pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    init_model_std(cfg, seed, INIT_STD)
}

pub(crate) fn init_model_std(cfg: &ModelConfig, seed: u64, std: f64) -> Result<Model> {
    cfg.validate()?;
    let (layout, info) = build_layout(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = info.iter().map(|i| init_tensor_std(i, std, &mut rng)).collect();
    Ok(Model {
        config: cfg.clone(),
        params,
        info,
        layout,
    })
}

/// Sequences padded to the longest in the batch.
/// Where each example's tokens sit among the rows of the encoder output.
struct RowMap {
    starts: Vec<usize>,
    n_rows: usize,
    boundary_shape: Vec<usize>,
}

fn check_labels(batch: &[TrainingExample], heads: &HeadSet) -> Result<()> {
    for h in heads.iter() {
        if !batch.iter().any(|ex| ex.has_labels_for(h)) {
            return Err(ModelError::MissingLabels(h));
        }
    }
    Ok(())
}

struct Padded {
    batch: usize,
    seq: usize,
    ids: Vec<usize>,
    segs: Vec<usize>,
    positions: Vec<usize>,
    key_mask: Vec<bool>,
}

impl Model {
    /// Rebuilds a model from stored tensors; names and shapes must match the
    /// layout implied by `cfg`.
    pub fn from_parts(cfg: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Model> {
        cfg.validate()?;
        let (layout, info) = build_layout(&cfg);
        if tensors.len() != info.len() {
            return Err(ModelError::ParamMismatch(format!(
                "expected {} parameters, found {}",
                info.len(),
                tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(info.len());
        for (i, (name, mut t)) in info.iter().zip(tensors) {
            if i.name != name || i.shape != t.shape() {
                return Err(ModelError::ParamMismatch(format!(
                    "{name} {:?} does not match {} {:?}",
                    t.shape(),
                    i.name,
                    i.shape
                )));
            }
            t.set_requires_grad(true);
            params.push(t);
        }
        Ok(Model {
            config: cfg,
            params,
            info,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Dropout rate used by training-mode forward passes.
    pub fn set_dropout(&mut self, p: f64) {
        self.config.dropout = p;
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn info(&self) -> &[ParamInfo] {
        &self.info
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Parameter ids belonging to the groups in `scope`.
    pub fn scope_params(&self, scope: Scope) -> Vec<ParamId> {
        (0..self.info.len()).filter(|&i| scope.includes(self.info[i].group)).collect()
    }

    /// Marks exactly the parameters of `scope` as trainable.
    pub fn apply_scope(&mut self, scope: Scope) {
        for (t, i) in self.params.iter_mut().zip(&self.info) {
            t.set_requires_grad(scope.includes(i.group));
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    /// Re-initializes the parameters of `heads` from `seed`; all other
    /// parameters are untouched.
    pub fn reset_heads(&mut self, heads: &HeadSet, seed: u64) {
        for h in heads.iter() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, h as u64));
            for (t, i) in self.params.iter_mut().zip(&self.info) {
                if i.head == Some(h) {
                    let trainable = t.requires_grad();
                    *t = init_tensor(i, &mut rng);
                    t.set_requires_grad(trainable);
                }
            }
        }
    }

    fn pad_batch(&self, batch: &[TrainingExample]) -> Result<Padded> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let seq = batch.iter().map(TrainingExample::len).max().unwrap_or(0);
        if seq > self.config.max_seq_len {
            return Err(ModelError::TooLong {
                len: seq,
                max: self.config.max_seq_len,
            });
        }
        let n = batch.len() * seq;
        let mut p = Padded {
            batch: batch.len(),
            seq,
            ids: vec![PAD; n],
            segs: vec![0; n],
            positions: (0..n).map(|i| i % seq).collect(),
            key_mask: vec![false; n],
        };
        for (b, ex) in batch.iter().enumerate() {
            for (t, &id) in ex.ids.iter().enumerate() {
                if id >= self.config.vocab_size {
                    return Err(ModelError::BadToken {
                        id,
                        vocab: self.config.vocab_size,
                    });
                }
                let s = ex.segment_ids.get(t).copied().unwrap_or(0) as usize;
                if s >= self.config.type_vocab {
                    return Err(ModelError::Config(format!("segment id {s} outside type_vocab")));
                }
                p.ids[b * seq + t] = id;
                p.segs[b * seq + t] = s;
                p.key_mask[b * seq + t] = true;
            }
        }
        Ok(p)
    }

    fn encode<R: Rng + ?Sized>(&self, g: &mut Graph, p: &Padded, mut rng: Option<&mut R>) -> Result<Var> {
        let cfg = &self.config;
        let l = &self.layout;
        let prm = |g: &mut Graph, id: ParamId| g.param(id, &self.params[id]);
        let drop = cfg.dropout;

        let tok = prm(g, l.tok);
        let pos = prm(g, l.pos);
        let seg = prm(g, l.seg);
        let e_tok = g.embedding(tok, &p.ids)?;
        let e_pos = g.embedding(pos, &p.positions)?;
        let e_seg = g.embedding(seg, &p.segs)?;
        let x = g.add(e_tok, e_pos)?;
        let x = g.add(x, e_seg)?;
        let (lg, lb) = (prm(g, l.emb_ln_g), prm(g, l.emb_ln_b));
        let x = g.layer_norm(x, lg, lb, LN_EPS)?;
        let mut x = g.dropout(x, drop, rng.as_deref_mut());

        let layout = AttentionLayout {
            batch: p.batch,
            seq: p.seq,
            heads: cfg.n_heads(),
        };
        for ly in &l.layers {
            let lin = |g: &mut Graph, x: Var, w: ParamId, b: Option<ParamId>| -> Result<Var> {
                let wv = g.param(w, &self.params[w]);
                let y = g.matmul(x, wv)?;
                Ok(match b {
                    Some(b) => {
                        let bv = g.param(b, &self.params[b]);
                        g.add_bias(y, bv)?
                    }
                    None => y,
                })
            };
            let q = lin(g, x, ly.wq, Some(ly.bq))?;
            let k = lin(g, x, ly.wk, None)?;
            let v = lin(g, x, ly.wv, Some(ly.bv))?;
            let a = g.attention(q, k, v, layout, &p.key_mask)?;
            let a = lin(g, a, ly.wo, Some(ly.bo))?;
            let a = g.dropout(a, drop, rng.as_deref_mut());
            let h = g.add(x, a)?;
            let (g1, b1) = (prm(g, ly.ln1_g), prm(g, ly.ln1_b));
            let h = g.layer_norm(h, g1, b1, LN_EPS)?;
            let f = lin(g, h, ly.w1, Some(ly.b1))?;
            let f = g.gelu(f);
            let f = lin(g, f, ly.w2, Some(ly.b2))?;
            let f = g.dropout(f, drop, rng.as_deref_mut());
            let o = g.add(h, f)?;
            let (g2, b2) = (prm(g, ly.ln2_g), prm(g, ly.ln2_b));
            x = g.layer_norm(o, g2, b2, LN_EPS)?;
        }
        Ok(x)
    }

    fn head_logits(&self, g: &mut Graph, x: Var, ids: &HeadIds, pooled: bool) -> Result<Var> {
        let prm = |g: &mut Graph, id: ParamId| g.param(id, &self.params[id]);
        let w = prm(g, ids.dense);
        let b = prm(g, ids.dense_b);
        let h = g.matmul(x, w)?;
        let h = g.add_bias(h, b)?;
        let mut h = if pooled { g.tanh(h) } else { g.gelu(h) };
        if let Some((lg, lb)) = ids.ln {
            let (lg, lb) = (prm(g, lg), prm(g, lb));
            h = g.layer_norm(h, lg, lb, LN_EPS)?;
        }
        let w = prm(g, ids.out);
        let b = prm(g, ids.out_b);
        let o = g.matmul(h, w)?;
        Ok(g.add_bias(o, b)?)
    }

    /// Runs the encoder and the requested heads. `rng == None` is evaluation
    /// mode (no dropout). Every requested head must have labels on at least
    /// one example; examples without labels for a head are ignored by its loss.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        batch: &[TrainingExample],
        heads: &HeadSet,
        rng: Option<&mut R>,
    ) -> Result<Forward> {
        check_labels(batch, heads)?;
        let p = self.pad_batch(batch)?;
        let mut g = Graph::new();
        let x = self.encode(&mut g, &p, rng)?;
        let rows = RowMap {
            starts: (0..p.batch).map(|b| b * p.seq).collect(),
            n_rows: p.batch * p.seq,
            boundary_shape: vec![p.batch, p.seq, 4],
        };
        self.run_heads(g, x, batch, heads, &rows)
    }

    /// Like [`Model::forward`] in evaluation mode, but starts from stored
    /// encoder outputs: `features[i]` must be `example_features(&batch[i])`.
    /// Only head parameters enter the graph. Boundary logits are
    /// `[total tokens, 4]`, the examples' tokens laid end to end.
    pub fn forward_features(&self, batch: &[TrainingExample], features: &[&Tensor], heads: &HeadSet) -> Result<Forward> {
        check_labels(batch, heads)?;
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let d = self.config.emb_dim;
        if features.len() != batch.len() {
            return Err(ModelError::Config(format!("{} feature blocks for {} examples", features.len(), batch.len())));
        }
        let mut starts = Vec::with_capacity(batch.len());
        let mut data = Vec::new();
        for (ex, f) in batch.iter().zip(features) {
            if f.shape() != [ex.len(), d] {
                return Err(ModelError::Config(format!(
                    "features of shape {:?} for an example of length {}",
                    f.shape(),
                    ex.len()
                )));
            }
            starts.push(data.len() / d);
            data.extend_from_slice(f.data());
        }
        let n_rows = data.len() / d;
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[n_rows, d], data)?);
        let rows = RowMap {
            starts,
            n_rows,
            boundary_shape: vec![n_rows, 4],
        };
        self.run_heads(g, x, batch, heads, &rows)
    }

    /// Final hidden states of one example in evaluation mode, `[len, emb_dim]`.
    pub fn example_features(&self, ex: &TrainingExample) -> Result<Tensor> {
        self.hidden_states(core::slice::from_ref(ex))
    }

    fn run_heads(&self, mut g: Graph, x: Var, batch: &[TrainingExample], heads: &HeadSet, rows: &RowMap) -> Result<Forward> {
        let bsz = batch.len();
        let cls_rows = rows.starts.clone();

        let mut outputs = HeadOutputs {
            logits: BTreeMap::new(),
            losses: BTreeMap::new(),
            targets: BTreeMap::new(),
            total: 0.0,
        };
        let mut loss_vars = Vec::new();
        for h in heads.iter() {
            let (logits, targets, shape) = match h {
                Head::Mlm => {
                    let mut picked = Vec::new();
                    let mut targets = Vec::new();
                    for (b, ex) in batch.iter().enumerate() {
                        for (&pos, &label) in ex.mlm_positions.iter().zip(&ex.mlm_labels) {
                            picked.push(rows.starts[b] + pos);
                            targets.push(Some(label));
                        }
                    }
                    let sel = g.gather_rows(x, &picked)?;
                    let lg = self.head_logits(&mut g, sel, &self.layout.mlm, false)?;
                    let shape = vec![picked.len(), self.config.vocab_size];
                    (lg, targets, shape)
                }
                Head::Nsp | Head::Pad => {
                    let cls = g.gather_rows(x, &cls_rows)?;
                    let ids = if h == Head::Nsp { &self.layout.nsp } else { &self.layout.pad };
                    let lg = self.head_logits(&mut g, cls, ids, true)?;
                    let targets = batch
                        .iter()
                        .map(|ex| {
                            let l = if h == Head::Nsp { ex.nsp_label } else { ex.pad_label };
                            l.map(usize::from)
                        })
                        .collect();
                    (lg, targets, vec![bsz, 2])
                }
                Head::Boundary => {
                    let lg = self.head_logits(&mut g, x, &self.layout.boundary, false)?;
                    let mut targets = vec![None; rows.n_rows];
                    for (b, ex) in batch.iter().enumerate() {
                        if let Some(labels) = &ex.boundary_labels {
                            for (t, l) in labels.iter().enumerate() {
                                targets[rows.starts[b] + t] = l.map(BoundaryLabel::class);
                            }
                        }
                    }
                    (lg, targets, rows.boundary_shape.clone())
                }
            };
            let loss = g.softmax_xent(logits, &targets)?;
            outputs.losses.insert(h, g.value(loss)[0]);
            let data = g.value(logits).to_vec();
            outputs.logits.insert(h, Tensor::new(&shape, data)?);
            outputs.targets.insert(h, targets);
            loss_vars.push(loss);
        }
        let mut total = match loss_vars.first() {
            Some(&l) => l,
            None => return Err(ModelError::Config(String::from("no heads requested"))),
        };
        for &l in &loss_vars[1..] {
            total = g.add(total, l)?;
        }
        outputs.total = g.value(total)[0];
        Ok(Forward {
            graph: g,
            loss: total,
            outputs,
        })
    }

    /// Evaluation-mode forward pass returning only the outputs.
    pub fn eval(&self, batch: &[TrainingExample], heads: &HeadSet) -> Result<HeadOutputs> {
        Ok(self.forward::<ChaCha8Rng>(batch, heads, None)?.outputs)
    }

    /// Attention weights of every layer for an evaluation pass,
    /// each `[batch, heads, seq, seq]`.
    pub fn attention_maps(&self, batch: &[TrainingExample]) -> Result<Vec<Vec<f64>>> {
        let p = self.pad_batch(batch)?;
        let mut g = Graph::new();
        self.encode::<ChaCha8Rng>(&mut g, &p, None)?;
        Ok(g.all_attention_probs().into_iter().map(<[f64]>::to_vec).collect())
    }

    /// Final hidden states `[batch * seq, emb_dim]` in evaluation mode.
    pub fn hidden_states(&self, batch: &[TrainingExample]) -> Result<Tensor> {
        let p = self.pad_batch(batch)?;
        let mut g = Graph::new();
        let x = self.encode::<ChaCha8Rng>(&mut g, &p, None)?;
        Ok(g.to_tensor(x))
    }
}
