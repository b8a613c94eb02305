//! Dense kernels shared by the forward and backward passes.

use super::Real;

/// `a (m×k) · b (k×n)`.
pub(crate) fn matmul(a: &[Real], b: &[Real], m: usize, k: usize, n: usize) -> Vec<Real> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out (m×k) += g (m×n) · bᵀ` where `b` is `k×n`.
pub(crate) fn matmul_bt_acc(g: &[Real], b: &[Real], out: &mut [Real], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<Real>();
        }
    }
}

/// `out (k×n) += aᵀ · g` where `a` is `m×k` and `g` is `m×n`.
pub(crate) fn matmul_at_acc(a: &[Real], g: &[Real], out: &mut [Real], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

pub(crate) fn transpose(a: &[Real], rows: usize, cols: usize) -> Vec<Real> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

pub(crate) fn softmax_rows(a: &[Real], cols: usize) -> Vec<Real> {
    let mut out = a.to_vec();
    for row in out.chunks_mut(cols) {
        let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

pub(crate) fn log_softmax_rows(a: &[Real], cols: usize) -> Vec<Real> {
    let mut out = a.to_vec();
    for row in out.chunks_mut(cols) {
        let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<Real>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// Row statistics `(mean, 1/sqrt(var + eps))` with the biased variance.
pub(crate) fn row_moments(row: &[Real], eps: Real) -> (Real, Real) {
    let n = row.len() as Real;
    let mean = row.iter().sum::<Real>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

const GELU_C: Real = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: Real = 0.044_715;

pub(crate) fn gelu(x: Real) -> Real {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: Real) -> Real {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}
