//! Packing of task records and pretraining material into `TrainingExample`s.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    encode_boundary_labels, weighted_mask, AdExample, BoundaryLabel, Chunk, CtExample, DataError, Head,
    HeadSet, MaskConfig, Result, Span, TrainingExample,
};
use crate::tokenizer::{segment_sample, segment_viterbi, TokenId, TokenSeq, Vocab, CLS, SEP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Segmentation {
    Viterbi,
    Sampled { alpha: f64 },
}

impl Segmentation {
    pub fn segment<R: Rng + ?Sized>(self, text: &str, vocab: &Vocab, rng: &mut R) -> Result<TokenSeq> {
        Ok(match self {
            Segmentation::Viterbi => segment_viterbi(text, vocab)?,
            Segmentation::Sampled { alpha } => segment_sample(text, vocab, alpha, rng)?,
        })
    }
}

/// `[CLS] a [SEP]`, truncating `a` to fit. Returns ids, segment ids and the
/// number of tokens of `a` kept.
pub fn pack_single(a: &[TokenId], max_len: usize) -> Result<(Vec<TokenId>, Vec<u8>, usize)> {
    if max_len < 3 {
        return Err(DataError::BadParams("max_seq_len must be at least 3"));
    }
    let na = a.len().min(max_len - 2);
    let mut ids = Vec::with_capacity(na + 2);
    ids.push(CLS);
    ids.extend_from_slice(&a[..na]);
    ids.push(SEP);
    let segs = vec![0; ids.len()];
    Ok((ids, segs, na))
}

/// `[CLS] a [SEP] b [SEP]`, removing tokens from the end of whichever segment
/// is currently longer until the pair fits. Returns ids, segment ids and the
/// kept lengths of `a` and `b`.
pub fn pack_pair(a: &[TokenId], b: &[TokenId], max_len: usize) -> Result<(Vec<TokenId>, Vec<u8>, usize, usize)> {
    if max_len < 5 {
        return Err(DataError::BadParams("max_seq_len must be at least 5 for pairs"));
    }
    let (mut na, mut nb) = (a.len(), b.len());
    while na + nb + 3 > max_len {
        if na > nb {
            na -= 1;
        } else {
            nb -= 1;
        }
    }
    let mut ids = Vec::with_capacity(na + nb + 3);
    ids.push(CLS);
    ids.extend_from_slice(&a[..na]);
    ids.push(SEP);
    let mut segs = vec![0u8; ids.len()];
    ids.extend_from_slice(&b[..nb]);
    ids.push(SEP);
    segs.resize(ids.len(), 1);
    Ok((ids, segs, na, nb))
}

fn empty_example(ids: Vec<TokenId>, segment_ids: Vec<u8>, heads: &[Head]) -> TrainingExample {
    TrainingExample {
        ids,
        segment_ids,
        mlm_positions: Vec::new(),
        mlm_labels: Vec::new(),
        nsp_label: None,
        boundary_labels: None,
        pad_label: None,
        objective_mask: HeadSet::new(heads),
    }
}

fn boundary_example(text: &str, spans: &[Span], vocab: &Vocab, max_len: usize) -> Result<TrainingExample> {
    let toks = segment_viterbi(text, vocab)?;
    let labels = encode_boundary_labels(&toks, spans)?;
    let (ids, segs, kept) = pack_single(&toks.ids, max_len)?;
    let mut boundary: Vec<Option<BoundaryLabel>> = Vec::with_capacity(ids.len());
    boundary.push(None);
    boundary.extend_from_slice(&labels[..kept]);
    boundary.push(None);
    let mut ex = empty_example(ids, segs, &[Head::Boundary]);
    ex.boundary_labels = Some(boundary);
    Ok(ex)
}

/// `[CLS] query [SEP]` with per-token boundary classes.
pub fn encode_ct(ex: &CtExample, vocab: &Vocab, max_len: usize) -> Result<TrainingExample> {
    boundary_example(&ex.query, &ex.spans, vocab, max_len)
}

/// `[CLS] chunk [SEP]` with link anchors as boundary targets.
pub fn encode_hyp(chunk: &Chunk, vocab: &Vocab, max_len: usize) -> Result<TrainingExample> {
    boundary_example(&chunk.text, &chunk.links, vocab, max_len)
}

/// `[CLS] acronym [SEP] snippet [SEP]` with the binary label on `[CLS]`.
pub fn encode_ad<R: Rng + ?Sized>(
    ex: &AdExample,
    vocab: &Vocab,
    max_len: usize,
    seg: Segmentation,
    rng: &mut R,
) -> Result<TrainingExample> {
    let a = seg.segment(&ex.acronym, vocab, rng)?;
    let b = seg.segment(&ex.snippet, vocab, rng)?;
    let (ids, segs, _, _) = pack_pair(&a.ids, &b.ids, max_len)?;
    let mut out = empty_example(ids, segs, &[Head::Pad]);
    out.pad_label = Some(ex.label);
    Ok(out)
}

/// Sentence pair with masked-token and next-sentence targets. If masking
/// selects no position only the pair label is supervised.
#[allow(clippy::too_many_arguments)]
pub fn encode_mlm_nsp<R: Rng + ?Sized>(
    a: &str,
    b: &str,
    nsp_label: u8,
    vocab: &Vocab,
    freqs: &[u64],
    mask: &MaskConfig,
    max_len: usize,
    seg: Segmentation,
    rng: &mut R,
) -> Result<TrainingExample> {
    let ta = seg.segment(a, vocab, rng)?;
    let tb = seg.segment(b, vocab, rng)?;
    let (ids, segs, _, _) = pack_pair(&ta.ids, &tb.ids, max_len)?;
    let m = weighted_mask(&ids, freqs, vocab.len(), mask, rng)?;
    let heads: &[Head] = if m.positions.is_empty() {
        &[Head::Nsp]
    } else {
        &[Head::Mlm, Head::Nsp]
    };
    let mut out = empty_example(m.corrupted, segs, heads);
    out.mlm_positions = m.positions;
    out.mlm_labels = m.labels;
    out.nsp_label = Some(nsp_label);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::build_vocab;
    use alloc::string::String;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocab {
        build_vocab(
            ["much of world of warcraft's gameplay involves the completion of quests. super mario wow"],
            120,
        )
        .unwrap()
    }

    #[test]
    fn pair_truncation_is_longest_first() {
        let a = [10; 9];
        let b = [11; 4];
        let (ids, segs, na, nb) = pack_pair(&a, &b, 12).unwrap();
        assert_eq!((na, nb), (5, 4));
        assert_eq!(ids.len(), 12);
        assert_eq!(ids[0], CLS);
        assert_eq!(ids[6], SEP);
        assert_eq!(*ids.last().unwrap(), SEP);
        assert_eq!(segs.iter().filter(|&&s| s == 1).count(), 5);
        assert!(pack_pair(&a, &b, 4).is_err());
    }

    #[test]
    fn single_packing_truncates() {
        let (ids, segs, kept) = pack_single(&[7; 10], 6).unwrap();
        assert_eq!(ids, [CLS, 7, 7, 7, 7, SEP]);
        assert_eq!(segs, [0; 6]);
        assert_eq!(kept, 4);
    }

    #[test]
    fn ct_example_validates_and_specials_are_unsupervised() {
        let v = vocab();
        let ex = CtExample {
            query: String::from("super mario gameplay"),
            spans: alloc::vec![(0, 11)],
        };
        let t = encode_ct(&ex, &v, 64).unwrap();
        t.validate(64).unwrap();
        let b = t.boundary_labels.as_ref().unwrap();
        assert_eq!(b[0], None);
        assert_eq!(*b.last().unwrap(), None);
        assert!(b.contains(&Some(BoundaryLabel::Start)));
        assert!(t.objective_mask.contains(Head::Boundary));
    }

    #[test]
    fn ad_and_mlm_examples_validate() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ad = AdExample {
            acronym: String::from("wow"),
            snippet: String::from("much of world of warcraft's gameplay"),
            label: 1,
        };
        let seg = Segmentation::Sampled { alpha: 0.2 };
        let t = encode_ad(&ad, &v, 32, seg, &mut rng).unwrap();
        t.validate(32).unwrap();
        let first_sep = t.ids.iter().position(|&i| i == SEP).unwrap();
        assert_eq!(t.segment_ids.iter().filter(|&&s| s == 0).count(), first_sep + 1);
        assert_eq!(t.pad_label, Some(1));
        let freqs = alloc::vec![1u64; v.len()];
        let t = encode_mlm_nsp(
            "much of world of warcraft's gameplay",
            "involves the completion of quests.",
            1,
            &v,
            &freqs,
            &MaskConfig::default(),
            64,
            Segmentation::Viterbi,
            &mut rng,
        )
        .unwrap();
        t.validate(64).unwrap();
        assert!(t.objective_mask.contains(Head::Mlm));
        assert_eq!(t.nsp_label, Some(1));
    }
}
