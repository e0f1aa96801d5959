use alloc::string::String;
use alloc::vec::Vec;

use super::{Chunk, DataError, Document, Result, Span, StreamTag};
use crate::tokenizer::normalize;

/// Strips `[[anchor]]` link markup. Links may not nest and may not be empty.
/// Text is lowercased first; spans index characters of the plain text.
pub fn parse_markup(raw: &str, stream: StreamTag) -> Result<Document> {
    let lowered = normalize(raw);
    let chars: Vec<char> = lowered.chars().collect();
    let mut plain = String::with_capacity(lowered.len());
    let mut plain_len = 0usize;
    let mut links = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < chars.len() {
        let pair = |c| i + 1 < chars.len() && chars[i] == c && chars[i + 1] == c;
        if pair('[') {
            if open.is_some() {
                return Err(DataError::Markup {
                    position: i,
                    reason: "nested link",
                });
            }
            open = Some((i, plain_len));
            i += 2;
        } else if pair(']') {
            let Some((_, start)) = open.take() else {
                return Err(DataError::Markup {
                    position: i,
                    reason: "closing brackets without an open link",
                });
            };
            if start == plain_len {
                return Err(DataError::Markup {
                    position: i,
                    reason: "empty link",
                });
            }
            links.push((start, plain_len));
            i += 2;
        } else {
            plain.push(chars[i]);
            plain_len += 1;
            i += 1;
        }
    }
    if let Some((pos, _)) = open {
        return Err(DataError::Markup {
            position: pos,
            reason: "link never closed",
        });
    }
    Ok(Document {
        raw: String::from(raw),
        plain,
        links,
        stream,
    })
}

/// Character ranges of maximal non-whitespace runs.
pub fn word_ranges(text: &str) -> Vec<Span> {
    let mut out = Vec::new();
    let mut start = None;
    let mut n = 0;
    for (i, c) in text.chars().enumerate() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
        n = i + 1;
    }
    if let Some(s) = start {
        out.push((s, n));
    }
    out
}

fn ends_sentence(word: &[char]) -> bool {
    matches!(word.last(), Some('.' | '!' | '?'))
}

impl Document {
    /// Splits into chunks of whole sentences holding at most `max_words` words
    /// (a longer sentence is cut at the word limit). Links crossing a chunk
    /// boundary are dropped.
    pub fn chunks(&self, max_words: usize) -> Vec<Chunk> {
        let max_words = max_words.max(1);
        let chars: Vec<char> = self.plain.chars().collect();
        let words = word_ranges(&self.plain);
        // sentence = contiguous word index range
        let mut sentences: Vec<(usize, usize)> = Vec::new();
        let mut s = 0;
        for (w, &(a, b)) in words.iter().enumerate() {
            let len = w + 1 - s;
            if ends_sentence(&chars[a..b]) || len == max_words || w + 1 == words.len() {
                sentences.push((s, w + 1));
                s = w + 1;
            }
        }
        let mut groups: Vec<(usize, usize)> = Vec::new();
        for (a, b) in sentences {
            match groups.last_mut() {
                Some(g) if b - g.0 <= max_words => g.1 = b,
                _ => groups.push((a, b)),
            }
        }
        groups
            .into_iter()
            .map(|(a, b)| {
                let (start, end) = (words[a].0, words[b - 1].1);
                let links = self
                    .links
                    .iter()
                    .filter(|&&(s, e)| s >= start && e <= end)
                    .map(|&(s, e)| (s - start, e - start))
                    .collect();
                Chunk {
                    text: chars[start..end].iter().collect(),
                    links,
                }
            })
            .collect()
    }
}
