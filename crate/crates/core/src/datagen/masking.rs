//! Rarity-biased masked-LM selection.
//!
//! A sequence with `N` maskable positions gets `n = round(rate * N)` of them,
//! drawn without replacement by randomized systematic sampling so that each
//! position's inclusion probability is exactly `n * w_i / sum(w)` with
//! `w_i = freq_i ^ exponent` (capped at 1, with the excess redistributed).

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Result};

use crate::tokenizer::{TokenId, Vocab, MASK, NUM_SPECIAL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub rate: f64,
    /// Weight exponent on token frequency; negative favours rare tokens.
    pub exponent: f64,
    pub mask_prob: f64,
    pub random_prob: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            rate: 0.15,
            exponent: -0.5,
            mask_prob: 0.8,
            random_prob: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Masked {
    pub positions: Vec<usize>,
    pub labels: Vec<TokenId>,
    pub corrupted: Vec<TokenId>,
}

/// Selection weight of a token seen `freq` times (unseen counts as once).
pub fn mask_weight(freq: u64, exponent: f64) -> f64 {
    libm::pow(freq.max(1) as f64, exponent)
}

/// Token counts indexed by id.
pub fn token_frequencies<'a, I>(sequences: I, vocab_size: usize) -> Vec<u64>
where
    I: IntoIterator<Item = &'a [TokenId]>,
{
    let mut f = vec![0u64; vocab_size];
    for s in sequences {
        for &id in s {
            if id < vocab_size {
                f[id] += 1;
            }
        }
    }
    f
}

/// Inclusion probabilities summing to `n`, each capped at 1.
fn inclusion_probs(weights: &[f64], n: usize) -> Vec<f64> {
    let mut pi = vec![0.0; weights.len()];
    let mut capped = vec![false; weights.len()];
    loop {
        let free: f64 = weights
            .iter()
            .zip(&capped)
            .filter(|(_, c)| !**c)
            .map(|(w, _)| w)
            .sum();
        let budget = n as f64 - capped.iter().filter(|c| **c).count() as f64;
        let scale = if free > 0.0 { budget / free } else { 0.0 };
        let mut changed = false;
        for i in 0..weights.len() {
            if capped[i] {
                pi[i] = 1.0;
            } else if weights[i] * scale >= 1.0 {
                capped[i] = true;
                changed = true;
            } else {
                pi[i] = weights[i] * scale;
            }
        }
        if !changed {
            return pi;
        }
    }
}

pub fn weighted_mask<R: Rng + ?Sized>(
    ids: &[TokenId],
    freqs: &[u64],
    vocab_size: usize,
    cfg: &MaskConfig,
    rng: &mut R,
) -> Result<Masked> {
    if !(cfg.rate > 0.0 && cfg.rate < 1.0) {
        return Err(DataError::BadMaskRate(cfg.rate));
    }
    let maskable: Vec<usize> = (0..ids.len()).filter(|&i| !Vocab::is_special(ids[i])).collect();
    if maskable.is_empty() {
        return Err(DataError::NoMaskablePositions);
    }
    let n = libm::round(cfg.rate * maskable.len() as f64) as usize;
    let weights: Vec<f64> = maskable
        .iter()
        .map(|&i| mask_weight(freqs.get(ids[i]).copied().unwrap_or(0), cfg.exponent))
        .collect();
    let pi = inclusion_probs(&weights, n);

    let mut order: Vec<usize> = (0..maskable.len()).collect();
    order.shuffle(rng);
    let mut next = rng.random::<f64>();
    let mut cum = 0.0;
    let mut chosen = Vec::with_capacity(n);
    for &k in &order {
        cum += pi[k];
        if chosen.len() < n && next < cum {
            chosen.push(maskable[k]);
            next += 1.0;
        }
    }
    // rounding in the cumulative sum can leave the last point unreached
    for &k in order.iter().rev() {
        if chosen.len() >= n {
            break;
        }
        if !chosen.contains(&maskable[k]) {
            chosen.push(maskable[k]);
        }
    }
    chosen.sort_unstable();

    let mut corrupted = ids.to_vec();
    let labels = chosen.iter().map(|&p| ids[p]).collect();
    for &p in &chosen {
        let r: f64 = rng.random();
        if r < cfg.mask_prob {
            corrupted[p] = MASK;
        } else if r < cfg.mask_prob + cfg.random_prob && vocab_size > NUM_SPECIAL {
            corrupted[p] = rng.random_range(NUM_SPECIAL..vocab_size);
        }
    }
    Ok(Masked {
        positions: chosen,
        labels,
        corrupted,
    })
}
