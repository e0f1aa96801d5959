//! Unigram-LM subword tokenizer: best-path (Viterbi) segmentation and sampled
//! segmentation over the same lattice for subword regularization.
//!
//! Offsets are in characters (Unicode scalar values), not bytes.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const CLS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const MASK: TokenId = 4;
pub const NUM_SPECIAL: usize = 5;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Longest candidate substring considered when building a vocabulary.
pub const MAX_PIECE_CHARS: usize = 8;
/// Candidates below this count are dropped (single characters are always kept).
pub const MIN_PIECE_COUNT: u64 = 2;
/// Score of an `[UNK]` lattice edge. Only used for characters no piece covers.
const UNK_LOG_PROB: f64 = -100.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TokenizerError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty text")]
    EmptyText,
    #[error("target size {target} below {required} (characters plus specials)")]
    TargetTooSmall { target: usize, required: usize },
    #[error("invalid piece {piece:?}: {reason}")]
    InvalidPiece { piece: String, reason: &'static str },
    #[error("character {0:?} of a multi-character piece is not itself a piece")]
    MissingChar(char),
    #[error("pieces are not in canonical id order at {0:?}")]
    NonCanonicalOrder(String),
    #[error("sampling alpha must lie in (0, 1], got {0}")]
    BadAlpha(f64),
}

pub type Result<T, E = TokenizerError> = core::result::Result<T, E>;

/// Lowercase normalization applied to all corpus and task text.
pub fn normalize(text: &str) -> String {
    text.to_lowercase()
}

/// Subword inventory. Ids: specials `0..5`, then pieces by descending
/// log-probability, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    pieces: Vec<String>,
    log_probs: Vec<f64>,
    index: BTreeMap<String, TokenId>,
    max_chars: usize,
}

impl Vocab {
    /// Builds a vocabulary from `(piece, log_prob)` pairs in any order.
    pub fn from_pieces(pairs: Vec<(String, f64)>) -> Result<Self> {
        let mut pairs = pairs;
        for (p, lp) in &pairs {
            let reason = if p.is_empty() {
                Some("empty")
            } else if SPECIAL_TOKENS.contains(&p.as_str()) {
                Some("reserved special token")
            } else if !lp.is_finite() || *lp > 0.0 {
                Some("log-probability must be finite and <= 0")
            } else if p.chars().count() > 1 && p.chars().any(char::is_whitespace) {
                Some("multi-character piece spans whitespace")
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(TokenizerError::InvalidPiece {
                    piece: p.clone(),
                    reason,
                });
            }
        }
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut pieces: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut log_probs = vec![0.0; NUM_SPECIAL];
        let mut index = BTreeMap::new();
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            index.insert(s.to_string(), i);
        }
        let mut max_chars = 1;
        for (p, lp) in pairs {
            if index.contains_key(&p) {
                return Err(TokenizerError::InvalidPiece {
                    piece: p,
                    reason: "duplicate",
                });
            }
            max_chars = max_chars.max(p.chars().count());
            index.insert(p.clone(), pieces.len());
            pieces.push(p);
            log_probs.push(lp);
        }
        let vocab = Vocab {
            pieces,
            log_probs,
            index,
            max_chars,
        };
        for p in &vocab.pieces[NUM_SPECIAL..] {
            for c in p.chars() {
                let mut buf = [0u8; 4];
                if !vocab.index.contains_key(c.encode_utf8(&mut buf) as &str) {
                    return Err(TokenizerError::MissingChar(c));
                }
            }
        }
        Ok(vocab)
    }

    /// Like [`Vocab::from_pieces`] but requires the input to already be in id order,
    /// so that a loaded file reproduces its ids exactly.
    pub fn from_ordered(pairs: Vec<(String, f64)>) -> Result<Self> {
        let order: Vec<String> = pairs.iter().map(|(p, _)| p.clone()).collect();
        let vocab = Self::from_pieces(pairs)?;
        for (i, p) in order.iter().enumerate() {
            if vocab.pieces[NUM_SPECIAL + i] != *p {
                return Err(TokenizerError::NonCanonicalOrder(p.clone()));
            }
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<TokenId> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: TokenId) -> &str {
        &self.pieces[id]
    }

    pub fn log_prob(&self, id: TokenId) -> f64 {
        self.log_probs[id]
    }

    pub fn is_special(id: TokenId) -> bool {
        id < NUM_SPECIAL
    }

    /// Non-special pieces with their log-probabilities, in id order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.pieces[NUM_SPECIAL..]
            .iter()
            .zip(&self.log_probs[NUM_SPECIAL..])
            .map(|(p, lp)| (p.as_str(), *lp))
    }

    pub fn char_set(&self) -> impl Iterator<Item = char> + '_ {
        self.pieces[NUM_SPECIAL..].iter().filter_map(|p| {
            let mut it = p.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => Some(c),
                _ => None,
            }
        })
    }

    /// Every lattice edge starting at `start`: `(end, id, log_prob)`.
    fn edges_from(&self, chars: &[char], start: usize, buf: &mut String, out: &mut Vec<(usize, TokenId, f64)>) {
        out.clear();
        buf.clear();
        let limit = (chars.len() - start).min(self.max_chars);
        for len in 1..=limit {
            buf.push(chars[start + len - 1]);
            if let Some(&id) = self.index.get(buf.as_str()) {
                if id >= NUM_SPECIAL {
                    out.push((start + len, id, self.log_probs[id]));
                }
            }
        }
        if out.is_empty() {
            out.push((start + 1, UNK, UNK_LOG_PROB));
        }
    }

    fn lattice(&self, chars: &[char]) -> Vec<Vec<(usize, TokenId, f64)>> {
        let mut buf = String::new();
        let mut scratch = Vec::new();
        (0..chars.len())
            .map(|i| {
                self.edges_from(chars, i, &mut buf, &mut scratch);
                scratch.clone()
            })
            .collect()
    }
}

/// Segmentation of a text. Concatenating `pieces` reproduces the text exactly;
/// `offsets` are contiguous character ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSeq {
    pub ids: Vec<TokenId>,
    pub pieces: Vec<String>,
    pub offsets: Vec<(usize, usize)>,
}

impl TokenSeq {
    fn from_path(chars: &[char], path: &[(usize, usize, TokenId)]) -> Self {
        let mut seq = TokenSeq {
            ids: Vec::with_capacity(path.len()),
            pieces: Vec::with_capacity(path.len()),
            offsets: Vec::with_capacity(path.len()),
        };
        for &(s, e, id) in path {
            seq.ids.push(id);
            seq.pieces.push(chars[s..e].iter().collect());
            seq.offsets.push((s, e));
        }
        seq
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn text(&self) -> String {
        self.pieces.concat()
    }

    /// Sum of piece log-probabilities (`[UNK]` edges score a fixed penalty).
    pub fn score(&self, vocab: &Vocab) -> f64 {
        self.ids
            .iter()
            .map(|&id| if id == UNK { UNK_LOG_PROB } else { vocab.log_prob(id) })
            .sum()
    }

    /// Whether token `i` is a whitespace character piece.
    pub fn is_whitespace(&self, i: usize) -> bool {
        self.pieces[i].chars().all(char::is_whitespace)
    }
}

/// Builds a vocabulary of at most `target_size` entries (specials included) from
/// frequency-ranked substrings of whitespace-delimited words, plus every character.
pub fn build_vocab<'a, I>(corpus: I, target_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut words: BTreeMap<String, u64> = BTreeMap::new();
    let mut chars: BTreeMap<char, u64> = BTreeMap::new();
    let mut any = false;
    for text in corpus {
        let text = normalize(text);
        for c in text.chars().filter(|c| c.is_whitespace()) {
            *chars.entry(c).or_default() += 1;
            any = true;
        }
        for w in text.split_whitespace() {
            *words.entry(w.to_string()).or_default() += 1;
            any = true;
        }
    }
    if !any {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut multi: BTreeMap<String, u64> = BTreeMap::new();
    for (w, &f) in &words {
        let cs: Vec<char> = w.chars().collect();
        for i in 0..cs.len() {
            *chars.entry(cs[i]).or_default() += f;
            for len in 2..=MAX_PIECE_CHARS.min(cs.len() - i) {
                *multi.entry(cs[i..i + len].iter().collect()).or_default() += f;
            }
        }
    }
    let required = chars.len() + NUM_SPECIAL;
    if target_size < required {
        return Err(TokenizerError::TargetTooSmall {
            target: target_size,
            required,
        });
    }
    let mut ranked: Vec<(String, u64)> = multi
        .into_iter()
        .filter(|(_, c)| *c >= MIN_PIECE_COUNT)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(target_size - required);

    let mut selected: Vec<(String, u64)> = chars
        .into_iter()
        .map(|(c, n)| (c.to_string(), n))
        .collect();
    selected.extend(ranked);
    let total: u64 = selected.iter().map(|(_, n)| n).sum();
    let pairs = selected
        .into_iter()
        .map(|(p, n)| (p, libm::log(n as f64 / total as f64)))
        .collect();
    Vocab::from_pieces(pairs)
}

/// Highest-scoring segmentation. Ties prefer fewer pieces, then the
/// leftmost-longest piece sequence.
pub fn segment_viterbi(text: &str, vocab: &Vocab) -> Result<TokenSeq> {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return Err(TokenizerError::EmptyText);
    }
    let n = chars.len();
    let lattice = vocab.lattice(&chars);
    // best[i] = (score, pieces, next, id) for the suffix starting at i
    let mut best: Vec<(f64, usize, usize, TokenId)> = vec![(0.0, 0, n, PAD); n + 1];
    for i in (0..n).rev() {
        let mut cur: Option<(f64, usize, usize, TokenId)> = None;
        // edges are in increasing length, so `>=` on the length tie favours longer pieces
        for &(end, id, lp) in &lattice[i] {
            let cand = (lp + best[end].0, best[end].1 + 1, end, id);
            let better = match cur {
                None => true,
                Some(c) => cand.0 > c.0 || (cand.0 == c.0 && cand.1 <= c.1),
            };
            if better {
                cur = Some(cand);
            }
        }
        best[i] = cur.expect("lattice always has an edge");
    }
    let mut path = Vec::new();
    let mut i = 0;
    while i < n {
        let (_, _, next, id) = best[i];
        path.push((i, next, id));
        i = next;
    }
    Ok(TokenSeq::from_path(&chars, &path))
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + libm::log1p(libm::exp(lo - hi))
}

/// Samples a segmentation with probability proportional to
/// `(product of piece probabilities)^alpha` by forward filtering and backward
/// sampling over the segmentation lattice.
pub fn segment_sample<R: Rng + ?Sized>(text: &str, vocab: &Vocab, alpha: f64, rng: &mut R) -> Result<TokenSeq> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(TokenizerError::BadAlpha(alpha));
    }
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return Err(TokenizerError::EmptyText);
    }
    let n = chars.len();
    let lattice = vocab.lattice(&chars);
    let mut incoming: Vec<Vec<(usize, TokenId, f64)>> = vec![Vec::new(); n + 1];
    for (start, edges) in lattice.iter().enumerate() {
        for &(end, id, lp) in edges {
            incoming[end].push((start, id, alpha * lp));
        }
    }
    let mut fwd = vec![f64::NEG_INFINITY; n + 1];
    fwd[0] = 0.0;
    for j in 1..=n {
        for &(start, _, w) in &incoming[j] {
            fwd[j] = log_add(fwd[j], fwd[start] + w);
        }
    }
    let mut path = Vec::new();
    let mut j = n;
    while j > 0 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let edges = &incoming[j];
        let mut pick = edges.len() - 1;
        for (e, &(start, _, w)) in edges.iter().enumerate() {
            acc += libm::exp(fwd[start] + w - fwd[j]);
            if u < acc {
                pick = e;
                break;
            }
        }
        let (start, id, _) = edges[pick];
        path.push((start, j, id));
        j = start;
    }
    path.reverse();
    Ok(TokenSeq::from_path(&chars, &path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab_of(pairs: &[(&str, f64)]) -> Vocab {
        Vocab::from_pieces(pairs.iter().map(|(p, q)| (p.to_string(), libm::log(*q))).collect()).unwrap()
    }

    fn pieces(seq: &TokenSeq) -> Vec<&str> {
        seq.pieces.iter().map(String::as_str).collect()
    }

    #[test]
    fn build_vocab_hand_count() {
        let v = build_vocab(["aaab"], 7).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v.piece(5), "a");
        assert_eq!(v.piece(6), "b");
        assert!((libm::exp(v.log_prob(5)) - 0.75).abs() < 1e-12);
        assert!((libm::exp(v.log_prob(6)) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn build_vocab_fills_with_frequent_substrings() {
        let v = build_vocab(["ab ab ab abc"], 100).unwrap();
        // chars a, b, c, ' ' plus candidates ab (4), bc (1 -> dropped), abc (1 -> dropped)
        assert_eq!(v.len(), NUM_SPECIAL + 5);
        assert!(v.id("ab").is_some());
        assert!(v.id("abc").is_none());
        assert!(v.id(" ").is_some());
    }

    #[test]
    fn build_vocab_errors() {
        assert_eq!(
            build_vocab(["abc"], 7).unwrap_err(),
            TokenizerError::TargetTooSmall { target: 7, required: 8 }
        );
        assert_eq!(build_vocab([""], 10).unwrap_err(), TokenizerError::EmptyCorpus);
        assert_eq!(
            build_vocab(core::iter::empty::<&str>(), 10).unwrap_err(),
            TokenizerError::EmptyCorpus
        );
    }

    #[test]
    fn build_vocab_is_deterministic() {
        let corpus = ["the cat sat on the mat", "a bat and a cat"];
        assert_eq!(build_vocab(corpus, 30).unwrap(), build_vocab(corpus, 30).unwrap());
    }

    #[test]
    fn ids_ordered_by_probability_then_lexicographic() {
        let v = vocab_of(&[("b", 0.25), ("a", 0.25), ("c", 0.5)]);
        assert_eq!(v.piece(5), "c");
        assert_eq!(v.piece(6), "a");
        assert_eq!(v.piece(7), "b");
    }

    #[test]
    fn vocab_rejects_invalid_pieces() {
        assert!(Vocab::from_pieces(vec![("ab".into(), -1.0)]).is_err());
        assert!(Vocab::from_pieces(vec![("a".into(), 0.5)]).is_err());
        assert!(Vocab::from_pieces(vec![("[CLS]".into(), -1.0)]).is_err());
        assert!(Vocab::from_ordered(vec![("a".into(), -2.0), ("b".into(), -1.0)]).is_err());
    }

    #[test]
    fn viterbi_prefers_single_piece_when_more_probable() {
        // paths: [a,b] = 0.16, [ab] = 0.2
        let v = vocab_of(&[("a", 0.4), ("b", 0.4), ("ab", 0.2)]);
        assert_eq!(pieces(&segment_viterbi("ab", &v).unwrap()), ["ab"]);
        let v = vocab_of(&[("a", 0.45), ("b", 0.45), ("ab", 0.1)]);
        assert_eq!(pieces(&segment_viterbi("ab", &v).unwrap()), ["a", "b"]);
    }

    #[test]
    fn viterbi_ties_prefer_fewer_pieces_then_leftmost_longest() {
        let v = vocab_of(&[("a", 0.5), ("aa", 0.25)]);
        assert_eq!(pieces(&segment_viterbi("aa", &v).unwrap()), ["aa"]);
        // "aaa": [aa,a] and [a,aa] tie on score and count; leftmost-longest wins
        assert_eq!(pieces(&segment_viterbi("aaa", &v).unwrap()), ["aa", "a"]);
    }

    #[test]
    fn viterbi_single_char_and_unknown() {
        let v = vocab_of(&[("a", 0.5), ("b", 0.5)]);
        let s = segment_viterbi("a", &v).unwrap();
        assert_eq!(pieces(&s), ["a"]);
        let s = segment_viterbi("aπb", &v).unwrap();
        assert_eq!(s.ids[1], UNK);
        assert_eq!(s.offsets, [(0, 1), (1, 2), (2, 3)]);
        assert_eq!(s.text(), "aπb");
        assert_eq!(segment_viterbi("", &v).unwrap_err(), TokenizerError::EmptyText);
    }

    #[test]
    fn sampling_matches_exact_path_probability() {
        // P([aa]) = 0.5 / (0.5 + 0.25)
        let v = vocab_of(&[("a", 0.5), ("aa", 0.5)]);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| segment_sample("aa", &v, 1.0, &mut rng).unwrap().len() == 1)
            .count();
        let p = hits as f64 / n as f64;
        assert!((p - 2.0 / 3.0).abs() < 0.03, "{p}");
    }

    #[test]
    fn sampling_three_path_lattice_within_three_sigma() {
        // "ab" with pieces a, b, ab: paths [a,b] and [ab]; "abc" adds c and bc
        let v = vocab_of(&[("a", 0.3), ("b", 0.2), ("c", 0.1), ("ab", 0.25), ("bc", 0.15)]);
        // paths of "abc": [a,b,c], [ab,c], [a,bc]
        let alpha = 0.7;
        let w = |ps: &[f64]| libm::pow(ps.iter().product::<f64>(), alpha);
        let exact = [w(&[0.3, 0.2, 0.1]), w(&[0.25, 0.1]), w(&[0.3, 0.15])];
        let z: f64 = exact.iter().sum();
        let mut counts = [0usize; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        for _ in 0..n {
            let s = segment_sample("abc", &v, alpha, &mut rng).unwrap();
            let k = match pieces(&s).as_slice() {
                ["a", "b", "c"] => 0,
                ["ab", "c"] => 1,
                ["a", "bc"] => 2,
                other => panic!("{other:?}"),
            };
            counts[k] += 1;
        }
        for k in 0..3 {
            let p = exact[k] / z;
            let sigma = libm::sqrt(n as f64 * p * (1.0 - p));
            let diff = (counts[k] as f64 - n as f64 * p).abs();
            assert!(diff <= 3.0 * sigma, "path {k}: {} vs {}", counts[k], n as f64 * p);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let v = build_vocab(["the theme of these themes"], 40).unwrap();
        let a = segment_sample("these themes", &v, 0.2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = segment_sample("these themes", &v, 0.2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(segment_sample("x", &v, 0.0, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }

    fn text_strategy() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(vec!['a', 'b', 'c', 'd', ' ', 'é', 'z']), 1..30)
            .prop_map(|cs| cs.into_iter().collect())
    }

    proptest! {
        #[test]
        fn round_trip_and_viterbi_dominates(text in text_strategy(), seed in any::<u64>()) {
            let v = build_vocab(["abc abd bcd dab cab abba", "a b c d"], 40).unwrap();
            let best = segment_viterbi(&text, &v).unwrap();
            prop_assert_eq!(best.text(), text.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = segment_sample(&text, &v, 0.5, &mut rng).unwrap();
            prop_assert_eq!(s.text(), text.clone());
            prop_assert!(best.score(&v) >= s.score(&v) - 1e-9);
            let mut pos = 0;
            for (a, b) in &s.offsets {
                prop_assert_eq!(*a, pos);
                prop_assert!(b > a);
                pos = *b;
            }
            prop_assert_eq!(pos, text.chars().count());
            for (i, p) in best.pieces.iter().enumerate() {
                if p.chars().count() > 1 {
                    prop_assert!(!best.is_whitespace(i), "{}", format!("{p:?}"));
                    prop_assert!(!p.contains(' '));
                }
            }
        }
    }
}
