use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{BoundaryLabel, DataError, Result, Span};
use crate::tokenizer::{TokenSeq, Vocab};

/// Per-token boundary classes for `spans` over `tokens`.
///
/// A content token belongs to a span when it overlaps it, so spans that cut
/// through a subword snap outward. Whitespace pieces and special tokens are
/// unsupervised (`None`).
pub fn encode_boundary_labels(tokens: &TokenSeq, spans: &[Span]) -> Result<Vec<Option<BoundaryLabel>>> {
    let mut sorted = spans.to_vec();
    sorted.sort();
    for w in sorted.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(DataError::OverlappingSpans(w[0], w[1]));
        }
    }
    let end = tokens.offsets.last().map_or(0, |o| o.1);
    if let Some(&bad) = sorted.iter().find(|(s, e)| s >= e || *e > end) {
        return Err(DataError::BadSpan(bad));
    }
    let content = |i: usize| !Vocab::is_special(tokens.ids[i]) || tokens.ids[i] == crate::tokenizer::UNK;
    let mut labels: Vec<Option<BoundaryLabel>> = (0..tokens.len())
        .map(|i| (content(i) && !tokens.is_whitespace(i)).then_some(BoundaryLabel::Outside))
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; tokens.len()];
    for (k, &(s, e)) in sorted.iter().enumerate() {
        let inside: Vec<usize> = (0..tokens.len())
            .filter(|&i| labels[i].is_some())
            .filter(|&i| tokens.offsets[i].0 < e && tokens.offsets[i].1 > s)
            .collect();
        for &i in &inside {
            if owner[i].is_some() {
                return Err(DataError::SpanTokenConflict(i));
            }
            owner[i] = Some(k);
        }
        match inside.as_slice() {
            [] => {}
            [only] => labels[*only] = Some(BoundaryLabel::StartEnd),
            [first, .., last] => {
                labels[*first] = Some(BoundaryLabel::Start);
                labels[*last] = Some(BoundaryLabel::End);
            }
        }
    }
    Ok(labels)
}

/// Renders per-token classes as text with `[` before every opening token and
/// `]` after every closing token. Labels are taken independently per token, so
/// brackets need not balance.
pub fn decode_brackets(labels: &[Option<BoundaryLabel>], tokens: &TokenSeq) -> String {
    let mut out = String::new();
    for (i, piece) in tokens.pieces.iter().enumerate() {
        let label = labels.get(i).copied().flatten();
        if label.is_some_and(BoundaryLabel::opens) {
            out.push('[');
        }
        out.push_str(piece);
        if label.is_some_and(BoundaryLabel::closes) {
            out.push(']');
        }
    }
    out
}

/// `text` with `[`/`]` inserted around each span.
pub fn gold_brackets(text: &str, spans: &[Span]) -> String {
    let mut out = String::new();
    for (i, c) in text.chars().enumerate() {
        if spans.iter().any(|s| s.0 == i) {
            out.push('[');
        }
        out.push(c);
        if spans.iter().any(|s| s.1 == i + 1) {
            out.push(']');
        }
    }
    out
}

/// Counts of `[S, E, S&E, ~]` over supervised positions.
pub fn label_distribution<'a, I>(labels: I) -> [usize; 4]
where
    I: IntoIterator<Item = &'a Option<BoundaryLabel>>,
{
    let mut counts = [0; 4];
    for l in labels.into_iter().flatten() {
        counts[l.class()] += 1;
    }
    counts
}
