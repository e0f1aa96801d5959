//! Pseudo-acronym synthesis for the pretraining detection objective and
//! negative sampling for the acronym finetuning set.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{word_ranges, AdExample, DataError, Result, Span};

pub const MIN_SPAN_WORDS: usize = 2;
pub const MAX_SPAN_WORDS: usize = 6;
const MAX_REJECTIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMethod {
    Mutation,
    /// Initials of a span from another chunk (pretraining) or from a
    /// non-entity span of the same snippet (finetuning).
    SpanInitials,
}

/// A positive/negative pair generated from one chunk. `span` is the word
/// index range `[start, end)` whose initials form the positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PadPair {
    pub positive: AdExample,
    pub span: (usize, usize),
    pub negative: AdExample,
    pub method: NegativeMethod,
}

pub fn unigrams(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

pub fn initials<S: AsRef<str>>(words: &[S]) -> Result<String> {
    if !(MIN_SPAN_WORDS..=MAX_SPAN_WORDS).contains(&words.len()) {
        return Err(DataError::SpanLength(words.len()));
    }
    Ok(words.iter().filter_map(|w| w.as_ref().chars().next()).collect())
}

fn initials_unchecked(words: &[&str]) -> String {
    words.iter().filter_map(|w| w.chars().next()).collect()
}

/// True iff some run of 2 to 6 consecutive unigrams of `chunk` has initials
/// equal to `acronym`.
pub fn has_accidental_match(acronym: &str, chunk: &str) -> bool {
    let words = unigrams(chunk);
    let target: Vec<char> = acronym.chars().collect();
    let len = target.len();
    if !(MIN_SPAN_WORDS..=MAX_SPAN_WORDS).contains(&len) || words.len() < len {
        return false;
    }
    words
        .windows(len)
        .any(|w| w.iter().zip(&target).all(|(word, &c)| word.starts_with(c)))
}

/// Replaces `m ~ U{1..len}` distinct positions with a different letter a-z.
pub fn mutate_acronym<R: Rng + ?Sized>(acronym: &str, rng: &mut R) -> String {
    let mut chars: Vec<char> = acronym.chars().collect();
    if chars.is_empty() {
        return String::new();
    }
    let m = rng.random_range(1..=chars.len());
    for i in sample(rng, chars.len(), m) {
        let old = chars[i];
        chars[i] = loop {
            let c = char::from(b'a' + rng.random_range(0..26u8));
            if c != old {
                break c;
            }
        };
    }
    chars.into_iter().collect()
}

fn random_span<R: Rng + ?Sized>(n_words: usize, rng: &mut R) -> (usize, usize) {
    // uniform over every (start, length) with 2 <= length <= 6
    let total: usize = (MIN_SPAN_WORDS..=MAX_SPAN_WORDS.min(n_words))
        .map(|l| n_words + 1 - l)
        .sum();
    let mut k = rng.random_range(0..total);
    for len in MIN_SPAN_WORDS..=MAX_SPAN_WORDS.min(n_words) {
        let starts = n_words + 1 - len;
        if k < starts {
            return (k, k + len);
        }
        k -= starts;
    }
    unreachable!("span index within total")
}

/// Pretraining pseudo-acronym pair: the initials of a random span of `chunk`
/// as positive, and a negative drawn by mutation or from `other_chunk` with
/// equal probability, re-drawn until no span of `chunk` matches it.
pub fn gen_pad_example<R: Rng + ?Sized>(chunk: &str, other_chunk: &str, rng: &mut R) -> Result<PadPair> {
    let words = unigrams(chunk);
    if words.len() < MAX_SPAN_WORDS {
        return Err(DataError::ChunkTooShort {
            words: words.len(),
            required: MAX_SPAN_WORDS,
        });
    }
    let other = unigrams(other_chunk);
    if other.len() < MIN_SPAN_WORDS {
        return Err(DataError::ChunkTooShort {
            words: other.len(),
            required: MIN_SPAN_WORDS,
        });
    }
    let span = random_span(words.len(), rng);
    let acronym = initials_unchecked(&words[span.0..span.1]);
    for _ in 0..MAX_REJECTIONS {
        let (candidate, method) = if rng.random_bool(0.5) {
            (mutate_acronym(&acronym, rng), NegativeMethod::Mutation)
        } else {
            let s = random_span(other.len(), rng);
            (initials_unchecked(&other[s.0..s.1]), NegativeMethod::SpanInitials)
        };
        if !has_accidental_match(&candidate, chunk) {
            return Ok(PadPair {
                positive: AdExample {
                    acronym,
                    snippet: String::from(chunk),
                    label: 1,
                },
                span,
                negative: AdExample {
                    acronym: candidate,
                    snippet: String::from(chunk),
                    label: 0,
                },
                method,
            });
        }
    }
    Err(DataError::RejectionLimit(MAX_REJECTIONS))
}

/// One positive `(known_acronym, 1)` and one negative per snippet. The
/// negative is either the initials of a random span outside the entity or a
/// mutation of the known acronym; it must differ from the entity's initials
/// and the known acronym and must not be a snippet unigram. Mutations must
/// additionally match no span of the snippet.
pub fn gen_ad_finetune_example<R: Rng + ?Sized>(
    snippet: &str,
    entity: Span,
    known_acronym: &str,
    rng: &mut R,
) -> Result<(AdExample, AdExample, NegativeMethod)> {
    let words = unigrams(snippet);
    if words.contains(&known_acronym) {
        return Err(DataError::AcronymInSnippet(String::from(known_acronym)));
    }
    let ranges = word_ranges(snippet);
    let entity_words: Vec<usize> = (0..ranges.len())
        .filter(|&i| ranges[i].0 < entity.1 && ranges[i].1 > entity.0)
        .collect();
    if entity_words.is_empty() {
        return Err(DataError::BadSpan(entity));
    }
    let entity_initials = initials_unchecked(&words[entity_words[0]..=*entity_words.last().unwrap()]);
    let outside_entity =
        |s: (usize, usize)| s.1 <= entity_words[0] || s.0 > *entity_words.last().unwrap();
    for _ in 0..MAX_REJECTIONS {
        let (candidate, method) = if rng.random_bool(0.5) && words.len() >= MIN_SPAN_WORDS {
            let s = random_span(words.len(), rng);
            if !outside_entity(s) {
                continue;
            }
            (initials_unchecked(&words[s.0..s.1]), NegativeMethod::SpanInitials)
        } else {
            let m = mutate_acronym(known_acronym, rng);
            if has_accidental_match(&m, snippet) {
                continue;
            }
            (m, NegativeMethod::Mutation)
        };
        if candidate == entity_initials || candidate == known_acronym || words.contains(&candidate.as_str()) {
            continue;
        }
        let pos = AdExample {
            acronym: String::from(known_acronym),
            snippet: String::from(snippet),
            label: 1,
        };
        let neg = AdExample {
            acronym: candidate,
            snippet: String::from(snippet),
            label: 0,
        };
        return Ok((pos, neg, method));
    }
    Err(DataError::RejectionLimit(MAX_REJECTIONS))
}
