//! Planted-entity corpus: pseudo-word filler text with multi-word entities
//! whose words are built from a distinctive syllable inventory, so that
//! boundary cues learned on one set of entities transfer to unseen ones.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gen_ad_finetune_example, AdExample, CtExample, DataError, Result, STOPWORDS};
use crate::derive_seed;

const FILLER_ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const ENTITY_ONSETS: [&str; 9] = ["z", "x", "q", "j", "v", "w", "h", "y", "c"];
const ENTITY_NUCLEI: [&str; 6] = ["a", "e", "i", "o", "u", "y"];
const ENTITY_CODAS: [&str; 5] = ["", "n", "r", "x", "l"];

const STOPWORD_RATE: f64 = 0.3;
const ENTITY_RATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticParams {
    pub n_docs: usize,
    /// Total number of entities across all partitions.
    pub entity_lexicon_size: usize,
    /// Approximate words per document.
    pub doc_len: usize,
    pub filler_size: usize,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            n_docs: 400,
            entity_lexicon_size: 3000,
            doc_len: 250,
            filler_size: 800,
            seed: 0,
        }
    }
}

/// Word inventories. Entities in different partitions share no words, and the
/// two filler halves are disjoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub filler_pool: Vec<String>,
    pub filler_test: Vec<String>,
    pub pretrain: Vec<Vec<String>>,
    pub ct_pool: Vec<Vec<String>>,
    pub ct_test: Vec<Vec<String>>,
    pub ad: Vec<Vec<String>>,
}

impl Lexicon {
    /// Filler words in Zipf rank order (pool half interleaved with test half).
    pub fn filler(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.filler_pool.len() + self.filler_test.len());
        for i in 0..self.filler_pool.len().max(self.filler_test.len()) {
            out.extend(self.filler_pool.get(i).map(String::as_str));
            out.extend(self.filler_test.get(i).map(String::as_str));
        }
        out
    }
}

/// Generated corpus with markup (`[[...]]` in wiki documents only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub lexicon: Lexicon,
    pub wiki: Vec<String>,
    pub web: Vec<String>,
}

fn filler_word<R: Rng + ?Sized>(rng: &mut R) -> String {
    let n = *[1usize, 2, 2, 2, 3].choose(rng).unwrap();
    (0..n)
        .map(|_| format!("{}{}", FILLER_ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
        .collect()
}

fn entity_word<R: Rng + ?Sized>(rng: &mut R) -> String {
    let marked = format!(
        "{}{}{}",
        ENTITY_ONSETS.choose(rng).unwrap(),
        ENTITY_NUCLEI.choose(rng).unwrap(),
        ENTITY_CODAS.choose(rng).unwrap()
    );
    let plain = format!("{}{}", FILLER_ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap());
    if rng.random_bool(0.5) {
        marked + &plain
    } else {
        plain + &marked
    }
}

fn unique_words<R: Rng + ?Sized>(
    n: usize,
    used: &mut BTreeSet<String>,
    rng: &mut R,
    make: fn(&mut R) -> String,
) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = make(rng);
        if !STOPWORDS.contains(&w.as_str()) && used.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn entities<R: Rng + ?Sized>(n: usize, min_words: usize, used: &mut BTreeSet<String>, rng: &mut R) -> Vec<Vec<String>> {
    let lengths = WeightedIndex::new([3.0, 5.0, 2.0]).unwrap();
    (0..n)
        .map(|_| {
            let len = (lengths.sample(rng) + 1).max(min_words);
            unique_words(len, used, rng, entity_word)
        })
        .collect()
}

fn build_lexicon(p: &SyntheticParams) -> Result<Lexicon> {
    if p.entity_lexicon_size < 20 {
        return Err(DataError::LexiconTooSmall(p.entity_lexicon_size));
    }
    if p.filler_size < 10 {
        return Err(DataError::BadParams("filler_size must be at least 10"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, u64::MAX));
    let mut used = BTreeSet::new();
    let mut filler = unique_words(p.filler_size, &mut used, &mut rng, filler_word);
    let filler_test = filler.split_off(p.filler_size / 2);
    let n = p.entity_lexicon_size;
    let (n_pool, n_test, n_ad) = (n / 5, n * 3 / 20, n * 3 / 20);
    let n_pre = n - n_pool - n_test - n_ad;
    Ok(Lexicon {
        filler_pool: filler,
        filler_test,
        pretrain: entities(n_pre, 1, &mut used, &mut rng),
        ct_pool: entities(n_pool, 1, &mut used, &mut rng),
        ct_test: entities(n_test, 1, &mut used, &mut rng),
        ad: entities(n_ad, 2, &mut used, &mut rng),
    })
}

fn zipf(n: usize) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|r| 1.0 / r as f64)).expect("nonempty inventory")
}

fn document<R: Rng + ?Sized>(lex: &Lexicon, filler: &[&str], doc_len: usize, linked: bool, rng: &mut R) -> String {
    let filler_dist = zipf(filler.len());
    let mut out = String::new();
    let mut words = 0;
    while words < doc_len {
        let len = rng.random_range(6..=14);
        for k in 0..len {
            if k > 0 {
                out.push(' ');
            } else if !out.is_empty() {
                out.push(' ');
            }
            if rng.random_bool(ENTITY_RATE) {
                let e = lex.pretrain.choose(rng).unwrap().join(" ");
                if linked {
                    out.push_str("[[");
                    out.push_str(&e);
                    out.push_str("]]");
                } else {
                    out.push_str(&e);
                }
            } else if rng.random_bool(STOPWORD_RATE) {
                out.push_str(STOPWORDS.choose(rng).unwrap());
            } else {
                out.push_str(filler[filler_dist.sample(rng)]);
            }
        }
        out.push('.');
        words += len;
    }
    out
}

/// Alternating wiki (linked) and web (plain) documents. Each document is drawn
/// from its own seed derived from `(seed, doc_id)`.
pub fn gen_synthetic_corpus(p: &SyntheticParams) -> Result<SyntheticCorpus> {
    if p.n_docs == 0 || p.doc_len == 0 {
        return Err(DataError::BadParams("n_docs and doc_len must be positive"));
    }
    let lexicon = build_lexicon(p)?;
    let filler = lexicon.filler();
    let mut wiki = Vec::new();
    let mut web = Vec::new();
    for doc_id in 0..p.n_docs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, doc_id as u64));
        let linked = doc_id % 2 == 0;
        let d = document(&lexicon, &filler, p.doc_len, linked, &mut rng);
        if linked {
            wiki.push(d);
        } else {
            web.push(d);
        }
    }
    Ok(SyntheticCorpus { lexicon, wiki, web })
}

/// Context words interleaved with entities; entities never touch each other.
/// Returns the text and the character spans of the entities.
fn planted_text<R: Rng + ?Sized>(
    context: &[String],
    entities: &[&Vec<String>],
    n_context: usize,
    rng: &mut R,
) -> (String, Vec<(usize, usize)>) {
    // slots: entity i goes before context word positions[i]; distinct slots keep entities apart
    let mut slots: Vec<usize> = (0..=n_context).collect();
    slots.shuffle(rng);
    let mut slots = slots[..entities.len()].to_vec();
    slots.sort_unstable();
    let mut text = String::new();
    let mut spans = Vec::new();
    let mut chars = 0;
    let push = |w: &str, text: &mut String, chars: &mut usize| {
        if !text.is_empty() {
            text.push(' ');
            *chars += 1;
        }
        text.push_str(w);
        *chars += w.chars().count();
    };
    let mut e = 0;
    for k in 0..=n_context {
        while e < entities.len() && slots[e] == k {
            let phrase = entities[e].join(" ");
            push(&phrase, &mut text, &mut chars);
            spans.push((chars - phrase.chars().count(), chars));
            e += 1;
        }
        if k < n_context {
            let w: &str = if rng.random_bool(0.45) {
                STOPWORDS.choose(rng).unwrap()
            } else {
                context.choose(rng).unwrap()
            };
            push(w, &mut text, &mut chars);
        }
    }
    (text, spans)
}

fn ct_queries(context: &[String], ents: &[Vec<String>], n: usize, rng: &mut ChaCha8Rng) -> Vec<CtExample> {
    (0..n)
        .map(|_| {
            let k = if rng.random_bool(0.7) { 1 } else { 2 };
            let picked: Vec<&Vec<String>> = ents.choose_multiple(rng, k).collect();
            let n_context = rng.random_range(k + 1..=6);
            let (query, spans) = planted_text(context, &picked, n_context, rng);
            CtExample { query, spans }
        })
        .collect()
}

/// Concept tagging pool and held-out test queries. The two share no
/// non-stopword unigram: they use disjoint filler halves and entity sets.
pub fn gen_ct_datasets(lex: &Lexicon, n_pool: usize, n_test: usize, seed: u64) -> Result<(Vec<CtExample>, Vec<CtExample>)> {
    if lex.ct_pool.len() < 2 || lex.ct_test.len() < 2 {
        return Err(DataError::LexiconTooSmall(lex.ct_pool.len().min(lex.ct_test.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let pool = ct_queries(&lex.filler_pool, &lex.ct_pool, n_pool, &mut rng);
    let test = ct_queries(&lex.filler_test, &lex.ct_test, n_test, &mut rng);
    Ok((pool, test))
}

/// Acronym detection set of `2 * n_snippets` records: for every snippet the
/// initials of its entity (label 1) and one synthesized negative (label 0).
pub fn gen_ad_dataset(lex: &Lexicon, n_snippets: usize, seed: u64) -> Result<Vec<AdExample>> {
    if lex.ad.is_empty() {
        return Err(DataError::LexiconTooSmall(0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let context: Vec<String> = lex.filler().into_iter().map(String::from).collect();
    let mut out = Vec::with_capacity(2 * n_snippets);
    while out.len() < 2 * n_snippets {
        let entity = lex.ad.choose(&mut rng).unwrap();
        let acronym: String = entity.iter().filter_map(|w| w.chars().next()).collect();
        let n_context = rng.random_range(8..=14);
        let (snippet, spans) = planted_text(&context, &[entity], n_context, &mut rng);
        match gen_ad_finetune_example(&snippet, spans[0], &acronym, &mut rng) {
            Ok((pos, neg, _)) => {
                out.push(pos);
                out.push(neg);
            }
            Err(DataError::AcronymInSnippet(_) | DataError::RejectionLimit(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
