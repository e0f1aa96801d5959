//! Plain loops over row-major slices. Inner loops run over contiguous memory
//! so the compiler can vectorize them; reductions keep a fixed order so results
//! are bit-reproducible.

use alloc::vec;

use super::AttentionLayout;

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// A row-major operand: a slice plus `(row stride, column stride)`.
#[derive(Clone, Copy)]
struct View<'a>(&'a [f64], isize, isize);

fn reach(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

/// `c = alpha * a[m,k] * b[k,n] + beta * c`, where `c` has row stride `rsc`.
fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: View, b: View, beta: f64, c: &mut [f64], rsc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= (m - 1) * rsc + n);
    if k == 0 {
        return;
    }
    assert!(a.0.len() >= reach(m, k, a.1, a.2) && b.0.len() >= reach(k, n, b.1, b.2));
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

fn gemm_acc(m: usize, k: usize, n: usize, a: View, b: View, c: &mut [f64]) {
    gemm(m, k, n, 1.0, a, b, 1.0, c, n);
}

/// `c[m,n] += a[m,k] * b[k,n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc(m, k, n, View(a, k as isize, 1), View(b, n as isize, 1), c);
}

/// `c[m,k] += g[m,n] * b[k,n]^T`
pub(crate) fn matmul_bt_acc(g: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    gemm_acc(m, n, k, View(g, n as isize, 1), View(b, 1, n as isize), c);
}

/// `c[k,n] += a[m,k]^T * g[m,n]`
pub(crate) fn matmul_at_acc(a: &[f64], g: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc(k, m, n, View(a, 1, k as isize), View(g, n as isize, 1), c);
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2)) + x * INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Returns `(output [batch*seq, dim], probs [batch, heads, seq, seq])`.
pub(crate) fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    layout: AttentionLayout,
    dim: usize,
    key_mask: &[bool],
) -> (alloc::vec::Vec<f64>, alloc::vec::Vec<f64>) {
    let AttentionLayout { batch, seq, heads } = layout;
    let hd = dim / heads;
    let scale = 1.0 / libm::sqrt(hd as f64);
    let d = dim as isize;
    let mut out = vec![0.0; batch * seq * dim];
    let mut probs = vec![0.0; batch * heads * seq * seq];
    for b in 0..batch {
        let mask = &key_mask[b * seq..(b + 1) * seq];
        for h in 0..heads {
            let off = b * seq * dim + h * hd;
            let p = &mut probs[(b * heads + h) * seq * seq..][..seq * seq];
            gemm(seq, hd, seq, scale, View(&q[off..], d, 1), View(&k[off..], 1, d), 0.0, p, seq);
            for prow in p.chunks_exact_mut(seq) {
                let mut max = f64::NEG_INFINITY;
                for j in 0..seq {
                    if mask[j] {
                        max = max.max(prow[j]);
                    }
                }
                let mut z = 0.0;
                for j in 0..seq {
                    if mask[j] {
                        let e = libm::exp(prow[j] - max);
                        prow[j] = e;
                        z += e;
                    } else {
                        prow[j] = 0.0;
                    }
                }
                prow.iter_mut().for_each(|x| *x /= z);
            }
            gemm(seq, seq, hd, 1.0, View(p, seq as isize, 1), View(&v[off..], d, 1), 0.0, &mut out[off..], dim);
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward(
    g: &[f64],
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    layout: AttentionLayout,
    dim: usize,
    (dq, dk, dv): (&mut [f64], &mut [f64], &mut [f64]),
) {
    let AttentionLayout { batch, seq, heads } = layout;
    let hd = dim / heads;
    let scale = 1.0 / libm::sqrt(hd as f64);
    let d = dim as isize;
    let s = seq as isize;
    let mut ds = vec![0.0; seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let off = b * seq * dim + h * hd;
            let p = &probs[(b * heads + h) * seq * seq..][..seq * seq];
            let gv = View(&g[off..], d, 1);
            gemm(seq, seq, hd, 1.0, View(p, 1, s), gv, 1.0, &mut dv[off..], dim);
            gemm(seq, hd, seq, 1.0, gv, View(&v[off..], 1, d), 0.0, &mut ds, seq);
            for (dsrow, prow) in ds.chunks_exact_mut(seq).zip(p.chunks_exact(seq)) {
                let weighted = dot(prow, dsrow);
                for j in 0..seq {
                    dsrow[j] = scale * prow[j] * (dsrow[j] - weighted);
                }
            }
            gemm(seq, seq, hd, 1.0, View(&ds, s, 1), View(&k[off..], d, 1), 1.0, &mut dq[off..], dim);
            gemm(seq, seq, hd, 1.0, View(&ds, 1, s), View(&q[off..], d, 1), 1.0, &mut dk[off..], dim);
        }
    }
}
