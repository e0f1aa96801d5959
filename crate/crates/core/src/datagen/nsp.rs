use alloc::vec::Vec;

use rand::Rng;

use super::{DataError, Result};

/// A sentence pair addressed as `(document, chunk)` indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NspPair {
    pub a: (usize, usize),
    pub b: (usize, usize),
    /// 1 when `b` directly follows `a` in the same document.
    pub label: u8,
}

/// Draws `a` uniformly among chunks that have a successor; with probability
/// one half `b` is that successor, otherwise a uniform chunk of a different
/// document.
pub fn make_nsp_pair<T, R: Rng + ?Sized>(docs: &[Vec<T>], rng: &mut R) -> Result<NspPair> {
    let eligible: usize = docs.iter().map(|d| d.len().saturating_sub(1)).sum();
    if eligible == 0 {
        return Err(DataError::NotEnoughChunks("no document has two consecutive chunks"));
    }
    if docs.iter().filter(|d| !d.is_empty()).count() < 2 {
        return Err(DataError::NotEnoughChunks("negative pairs need a second document"));
    }
    let mut k = rng.random_range(0..eligible);
    let mut a = (0, 0);
    for (d, doc) in docs.iter().enumerate() {
        let n = doc.len().saturating_sub(1);
        if k < n {
            a = (d, k);
            break;
        }
        k -= n;
    }
    if rng.random_bool(0.5) {
        return Ok(NspPair {
            a,
            b: (a.0, a.1 + 1),
            label: 1,
        });
    }
    let others: usize = docs.iter().enumerate().filter(|(d, _)| *d != a.0).map(|(_, x)| x.len()).sum();
    let mut k = rng.random_range(0..others);
    for (d, doc) in docs.iter().enumerate() {
        if d == a.0 {
            continue;
        }
        if k < doc.len() {
            return Ok(NspPair { a, b: (d, k), label: 0 });
        }
        k -= doc.len();
    }
    unreachable!("index within other documents")
}
