//! Pretraining objective labels and finetuning datasets: link markup, boundary
//! labels, rarity-weighted masking, sentence pairs, pseudo-acronyms, and the
//! synthetic planted-entity corpus.

mod acronym;
mod encode;
mod labels;
mod markup;
mod masking;
mod nsp;
mod split;
mod synthetic;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{TokenId, TokenizerError};

pub use acronym::{
    gen_ad_finetune_example, gen_pad_example, has_accidental_match, initials, mutate_acronym,
    unigrams, NegativeMethod, PadPair, MAX_SPAN_WORDS, MIN_SPAN_WORDS,
};
pub use encode::{
    encode_ad, encode_ct, encode_hyp, encode_mlm_nsp, pack_pair, pack_single, Segmentation,
};
pub use labels::{decode_brackets, encode_boundary_labels, gold_brackets, label_distribution};
pub use markup::{parse_markup, word_ranges};
pub use masking::{mask_weight, token_frequencies, weighted_mask, MaskConfig, Masked};
pub use nsp::{make_nsp_pair, NspPair};
pub use split::{check_disjoint_split, shared_unigrams, STOPWORDS};
pub use synthetic::{
    gen_ad_dataset, gen_ct_datasets, gen_synthetic_corpus, Lexicon, SyntheticCorpus,
    SyntheticParams,
};

/// Character range `[start, end)`.
pub type Span = (usize, usize);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("unbalanced link markup at character {position}: {reason}")]
    Markup {
        position: usize,
        reason: &'static str,
    },
    #[error("span {0:?} is empty or out of bounds")]
    BadSpan(Span),
    #[error("spans {0:?} and {1:?} overlap")]
    OverlappingSpans(Span, Span),
    #[error("token {0} straddles two spans")]
    SpanTokenConflict(usize),
    #[error("no maskable positions")]
    NoMaskablePositions,
    #[error("mask rate must lie in (0, 1), got {0}")]
    BadMaskRate(f64),
    #[error("cannot build sentence pairs: {0}")]
    NotEnoughChunks(&'static str),
    #[error("acronym span must cover 2 to 6 unigrams, got {0}")]
    SpanLength(usize),
    #[error("chunk has {words} unigrams, need at least {required}")]
    ChunkTooShort { words: usize, required: usize },
    #[error("gave up after {0} rejected negatives")]
    RejectionLimit(usize),
    #[error("acronym {0:?} appears verbatim in the snippet")]
    AcronymInSnippet(String),
    #[error("entity lexicon of size {0} is too small to split")]
    LexiconTooSmall(usize),
    #[error("invalid generator parameters: {0}")]
    BadParams(&'static str),
    #[error("sets share non-stopword unigrams: {0:?}")]
    DisjointnessViolation(Vec<String>),
    #[error("invalid training example: {0}")]
    InvalidExample(&'static str),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

pub type Result<T, E = DataError> = core::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamTag {
    /// Link-annotated encyclopedic text.
    Wiki,
    /// Plain web text; tokenized with sampled segmentation.
    Web,
}

/// Markup document with links resolved to character spans of `plain`.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub raw: String,
    pub plain: String,
    pub links: Vec<Span>,
    pub stream: StreamTag,
}

/// A contiguous run of whole sentences from one document, with its links rebased.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub text: String,
    pub links: Vec<Span>,
}

/// Per-token concept boundary class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BoundaryLabel {
    #[serde(rename = "S")]
    Start,
    #[serde(rename = "E")]
    End,
    #[serde(rename = "S&E")]
    StartEnd,
    #[serde(rename = "~")]
    Outside,
}

impl BoundaryLabel {
    pub const ALL: [BoundaryLabel; 4] = [
        BoundaryLabel::Start,
        BoundaryLabel::End,
        BoundaryLabel::StartEnd,
        BoundaryLabel::Outside,
    ];

    pub fn class(self) -> usize {
        self as usize
    }

    pub fn from_class(c: usize) -> Option<Self> {
        Self::ALL.get(c).copied()
    }

    pub fn opens(self) -> bool {
        matches!(self, BoundaryLabel::Start | BoundaryLabel::StartEnd)
    }

    pub fn closes(self) -> bool {
        matches!(self, BoundaryLabel::End | BoundaryLabel::StartEnd)
    }
}

/// The four prediction heads of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Mlm,
    Nsp,
    Boundary,
    Pad,
}

impl Head {
    pub const ALL: [Head; 4] = [Head::Mlm, Head::Nsp, Head::Boundary, Head::Pad];

    pub fn name(self) -> &'static str {
        match self {
            Head::Mlm => "mlm",
            Head::Nsp => "nsp",
            Head::Boundary => "boundary",
            Head::Pad => "pad",
        }
    }
}

/// Subset of heads, kept sorted and free of duplicates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<Head>", into = "Vec<Head>")]
pub struct HeadSet(Vec<Head>);

impl HeadSet {
    pub fn new(heads: &[Head]) -> Self {
        let mut v = heads.to_vec();
        v.sort();
        v.dedup();
        HeadSet(v)
    }

    pub fn contains(&self, h: Head) -> bool {
        self.0.contains(&h)
    }

    pub fn iter(&self) -> impl Iterator<Item = Head> + '_ {
        self.0.iter().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn intersect(&self, other: &HeadSet) -> HeadSet {
        HeadSet(self.0.iter().copied().filter(|h| other.contains(*h)).collect())
    }
}

impl From<Vec<Head>> for HeadSet {
    fn from(v: Vec<Head>) -> Self {
        HeadSet::new(&v)
    }
}

impl From<HeadSet> for Vec<Head> {
    fn from(s: HeadSet) -> Self {
        s.0
    }
}

/// One multitask record. Label fields are present iff the matching head is in
/// `objective_mask`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub ids: Vec<TokenId>,
    pub segment_ids: Vec<u8>,
    #[serde(default)]
    pub mlm_positions: Vec<usize>,
    #[serde(default)]
    pub mlm_labels: Vec<TokenId>,
    #[serde(default)]
    pub nsp_label: Option<u8>,
    #[serde(default)]
    pub boundary_labels: Option<Vec<Option<BoundaryLabel>>>,
    #[serde(default)]
    pub pad_label: Option<u8>,
    pub objective_mask: HeadSet,
}

impl TrainingExample {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn has_labels_for(&self, head: Head) -> bool {
        match head {
            Head::Mlm => !self.mlm_positions.is_empty(),
            Head::Nsp => self.nsp_label.is_some(),
            Head::Boundary => self.boundary_labels.is_some(),
            Head::Pad => self.pad_label.is_some(),
        }
    }

    /// Checks the structural invariants of an encoded example.
    pub fn validate(&self, max_len: usize) -> Result<()> {
        use crate::tokenizer::{CLS, SEP};
        let bad = |m| Err(DataError::InvalidExample(m));
        if self.ids.is_empty() || self.ids.len() > max_len {
            return bad("length outside 1..=max_seq_len");
        }
        if self.segment_ids.len() != self.ids.len() {
            return bad("segment ids length mismatch");
        }
        if self.ids[0] != CLS {
            return bad("first token is not [CLS]");
        }
        if *self.ids.last().unwrap() != SEP {
            return bad("last segment not terminated by [SEP]");
        }
        if let Some(first_b) = self.segment_ids.iter().position(|&s| s == 1) {
            if first_b == 0 || self.ids[first_b - 1] != SEP {
                return bad("first segment not terminated by [SEP]");
            }
        }
        if self.mlm_positions.len() != self.mlm_labels.len() {
            return bad("mlm positions and labels differ in length");
        }
        for (&p, &l) in self.mlm_positions.iter().zip(&self.mlm_labels) {
            if p >= self.ids.len() || crate::tokenizer::Vocab::is_special(l) {
                return bad("mlm position covers a special token");
            }
        }
        if let Some(b) = &self.boundary_labels {
            if b.len() != self.ids.len() {
                return bad("boundary labels length mismatch");
            }
        }
        for h in self.objective_mask.iter() {
            if !self.has_labels_for(h) {
                return bad("supervised head without labels");
            }
        }
        Ok(())
    }
}

/// Concept tagging record: a query and its gold concept spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CtExample {
    pub query: String,
    pub spans: Vec<Span>,
}

/// Acronym detection record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdExample {
    pub acronym: String,
    pub snippet: String,
    pub label: u8,
}
