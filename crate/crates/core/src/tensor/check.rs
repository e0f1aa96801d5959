use alloc::vec::Vec;

use super::{Result, Tensor, TensorError};

/// Fourth-order central differences
/// `(f(θ-2h) - 8f(θ-h) + 8f(θ+h) - f(θ+2h)) / 12h` for every coordinate of
/// every tensor that requires gradients. Tensors that do not require
/// gradients get an empty entry.
pub fn finite_diff_grad<F>(mut f: F, params: &mut [Tensor], h: f64) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[Tensor]) -> f64,
{
    if !(h > 0.0) {
        return Err(TensorError::NonFinite("finite_diff_grad step"));
    }
    if !params.iter().any(Tensor::requires_grad) {
        return Err(TensorError::NothingToCheck);
    }
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        if !params[p].requires_grad() {
            out.push(Vec::new());
            continue;
        }
        let mut g = Vec::with_capacity(params[p].len());
        for i in 0..params[p].len() {
            let orig = params[p].data[i];
            let mut at = |k: f64| {
                params[p].data[i] = orig + k * h;
                f(params)
            };
            let (m2, m1, p1, p2) = (at(-2.0), at(-1.0), at(1.0), at(2.0));
            params[p].data[i] = orig;
            if ![m2, m1, p1, p2].iter().all(|v| v.is_finite()) {
                return Err(TensorError::NonFinite("finite_diff_grad objective"));
            }
            g.push((m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h));
        }
        out.push(g);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|g_a - g_n| / max(|g_a|, |g_n|, 1e-8)` over all checked coordinates.
    pub max_rel_err: f64,
    /// `(tensor index, coordinate)` where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    /// Largest `|g_a - g_n|`.
    pub max_abs_err: f64,
    /// Largest `|g_a - g_n| - tol * max(|g_a|, |g_n|)`: how far any coordinate
    /// overshoots the relative tolerance in absolute terms.
    pub max_excess: f64,
    pub checked: usize,
    pub tol: f64,
    pub pass: bool,
}

pub fn compare_gradients(analytic: &[Vec<f64>], numeric: &[Vec<f64>], tol: f64) -> GradCheckReport {
    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    let mut max_abs_err = 0.0f64;
    let mut max_excess = f64::NEG_INFINITY;
    let mut checked = 0;
    for (t, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (i, (ga, gn)) in a.iter().zip(n).enumerate() {
            let denom = ga.abs().max(gn.abs()).max(1e-8);
            let rel = (ga - gn).abs() / denom;
            max_abs_err = max_abs_err.max((ga - gn).abs());
            max_excess = max_excess.max((ga - gn).abs() - tol * ga.abs().max(gn.abs()));
            checked += 1;
            if rel > max_rel_err || rel.is_nan() {
                max_rel_err = rel;
                worst = Some((t, i));
            }
        }
    }
    GradCheckReport {
        max_rel_err,
        worst,
        max_abs_err,
        max_excess,
        checked,
        tol,
        pass: checked > 0 && max_rel_err < tol,
    }
}
