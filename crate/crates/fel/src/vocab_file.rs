//! Line-oriented vocabulary file: a header `#unigram-vocab v1 size=<n>`,
//! then one `piece<TAB>log_prob` line per id, specials first.

use fel_core::tokenizer::{Vocab, NUM_SPECIAL, SPECIAL_TOKENS};
use thiserror::Error;

const HEADER: &str = "#unigram-vocab v1 size=";

#[derive(Debug, Error, PartialEq)]
pub enum VocabFileError {
    #[error("missing or malformed header line")]
    Header,
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("header declares {declared} entries, file has {found}")]
    Size { declared: usize, found: usize },
    #[error(transparent)]
    Vocab(#[from] fel_core::tokenizer::TokenizerError),
}

/// Tab, newline, carriage return and backslash are written as `\t`, `\n`,
/// `\r` and `\\`.
fn escape(piece: &str) -> String {
    let mut out = String::with_capacity(piece.len());
    for c in piece.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match it.next()? {
            '\\' => '\\',
            't' => '\t',
            'n' => '\n',
            'r' => '\r',
            _ => return None,
        });
    }
    Some(out)
}

pub fn write_vocab(vocab: &Vocab) -> String {
    let mut out = format!("{HEADER}{}\n", vocab.len());
    for s in SPECIAL_TOKENS {
        out.push_str(s);
        out.push_str("\t0\n");
    }
    for (p, lp) in vocab.entries() {
        out.push_str(&escape(p));
        out.push('\t');
        out.push_str(&lp.to_string());
        out.push('\n');
    }
    out
}

pub fn read_vocab(text: &str) -> Result<Vocab, VocabFileError> {
    let mut lines = text.lines();
    let declared: usize = lines
        .next()
        .and_then(|h| h.strip_prefix(HEADER))
        .and_then(|n| n.trim().parse().ok())
        .ok_or(VocabFileError::Header)?;
    let mut pairs = Vec::new();
    let mut found = 0;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let bad = |reason: &str| VocabFileError::Line {
            line: line_no,
            reason: reason.to_string(),
        };
        let (piece, lp) = line.rsplit_once('\t').ok_or_else(|| bad("expected piece<TAB>log_prob"))?;
        let piece = unescape(piece).ok_or_else(|| bad("bad escape sequence"))?;
        let lp: f64 = lp.parse().map_err(|_| bad("log_prob is not a number"))?;
        if found < NUM_SPECIAL {
            if piece != SPECIAL_TOKENS[found] {
                return Err(bad("special tokens must come first, in id order"));
            }
        } else {
            pairs.push((piece, lp));
        }
        found += 1;
    }
    if found != declared {
        return Err(VocabFileError::Size { declared, found });
    }
    Ok(Vocab::from_ordered(pairs)?)
}
