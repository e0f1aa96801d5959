use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{init_model_std, Model, ModelConfig, ModelError, Result};
use crate::datagen::{BoundaryLabel, Head, HeadSet, TrainingExample};
use crate::tensor::{compare_gradients, finite_diff_grad, GradCheckReport};
use crate::tokenizer::{CLS, NUM_SPECIAL, SEP};

const STEP: f64 = 1e-3;
/// Weight scale for the checked model. At the training scale (0.02) attention
/// scores are nearly flat and many gradient components fall below the
/// roundoff floor of central differences.
pub(crate) const CHECK_INIT_STD: f64 = 0.25;

/// Compares backpropagated gradients of the summed head losses on `batch`
/// against central differences, over every trainable parameter.
pub fn grad_check_batch(model: &mut Model, batch: &[TrainingExample], heads: &HeadSet, tol: f64) -> Result<GradCheckReport> {
    model.zero_grad();
    let fwd = model.forward::<ChaCha8Rng>(batch, heads, None)?;
    fwd.backward(model)?;
    let analytic: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| p.grad().map(<[f64]>::to_vec).unwrap_or_default())
        .collect();
    let cfg = model.config().clone();
    let info = model.info().to_vec();
    let layout = model.layout.clone();
    let numeric = finite_diff_grad(
        |params| {
            let probe = Model {
                config: cfg.clone(),
                params: params.to_vec(),
                info: info.clone(),
                layout: layout.clone(),
            };
            probe
                .forward::<ChaCha8Rng>(batch, heads, None)
                .map(|f| f.outputs.total)
                .unwrap_or(f64::NAN)
        },
        model.params_mut(),
        STEP,
    )?;
    Ok(compare_gradients(&analytic, &numeric, tol))
}

/// Two short sequences (one padded) carrying labels for all four heads.
fn probe_batch<R: Rng + ?Sized>(vocab: usize, rng: &mut R) -> Vec<TrainingExample> {
    let mut tok = || rng.random_range(NUM_SPECIAL..vocab);
    let (a, b, c, d, e) = (tok(), tok(), tok(), tok(), tok());
    use BoundaryLabel::*;
    let full = TrainingExample {
        ids: vec![CLS, a, SEP, b, c, SEP],
        segment_ids: vec![0, 0, 0, 1, 1, 1],
        mlm_positions: vec![1, 4],
        mlm_labels: vec![d, e],
        nsp_label: Some(1),
        boundary_labels: Some(vec![None, Some(StartEnd), None, Some(Start), Some(End), None]),
        pad_label: Some(0),
        objective_mask: HeadSet::new(&Head::ALL),
    };
    let short = TrainingExample {
        ids: vec![CLS, c, d, e, SEP],
        segment_ids: vec![0; 5],
        mlm_positions: vec![2],
        mlm_labels: vec![a],
        nsp_label: Some(0),
        boundary_labels: Some(vec![None, Some(Outside), Some(Start), Some(End), None]),
        pad_label: Some(1),
        objective_mask: HeadSet::new(&Head::ALL),
    };
    vec![full, short]
}

/// Gradient check of a freshly initialized model (weights drawn at scale
/// 0.25, dropout forced off) on a two-sequence batch exercising every head.
pub fn grad_check(cfg: &ModelConfig, seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut cfg = cfg.clone();
    cfg.dropout = 0.0;
    if cfg.max_seq_len < 6 || cfg.vocab_size <= NUM_SPECIAL {
        return Err(ModelError::Config("grad check needs max_seq_len >= 6 and a non-special token".into()));
    }
    let mut model = init_model_std(&cfg, seed, CHECK_INIT_STD)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = probe_batch(cfg.vocab_size, &mut rng);
    grad_check_batch(&mut model, &batch, &HeadSet::new(&Head::ALL), tol)
}
