//! Dense kernels behind the graph operations.
//!
//! Every output element of [`linear_forward`] is one call to [`dot`] over a
//! fixed pair of contiguous slices, so a row's result does not depend on how
//! many other rows are computed alongside it.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[r, n] = sum_k x[r, k] * w[n, k] + b[n]` for `x: [rows x k]`, `w: [n x k]`.
pub fn linear_forward(x: &[f64], rows: usize, w: &[f64], n: usize, b: Option<&[f64]>) -> Vec<f64> {
    let k = x.len() / rows;
    debug_assert_eq!(w.len(), n * k);
    let mut out = vec![0.0; rows * n];
    for r in 0..rows {
        let xr = &x[r * k..(r + 1) * k];
        let or = &mut out[r * n..(r + 1) * n];
        for (j, o) in or.iter_mut().enumerate() {
            *o = dot(xr, &w[j * k..(j + 1) * k]);
        }
        if let Some(b) = b {
            for (o, bj) in or.iter_mut().zip(b) {
                *o += bj;
            }
        }
    }
    out
}

/// Accumulates `gx += gy * w` (shape `[rows x k]`).
pub fn linear_backward_input(gy: &[f64], rows: usize, w: &[f64], n: usize, gx: &mut [f64]) {
    let k = gx.len() / rows;
    for r in 0..rows {
        let gxr = &mut gx[r * k..(r + 1) * k];
        for j in 0..n {
            let g = gy[r * n + j];
            if g != 0.0 {
                axpy(g, &w[j * k..(j + 1) * k], gxr);
            }
        }
    }
}

/// Accumulates `gw += gy^T * x` (shape `[n x k]`).
pub fn linear_backward_weight(gy: &[f64], rows: usize, x: &[f64], n: usize, gw: &mut [f64]) {
    let k = x.len() / rows;
    for r in 0..rows {
        let xr = &x[r * k..(r + 1) * k];
        for j in 0..n {
            let g = gy[r * n + j];
            if g != 0.0 {
                axpy(g, xr, &mut gw[j * k..(j + 1) * k]);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log(sum(exp(xs)))`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn log_softmax_row(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

pub fn softmax_row(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let b = vec![1.0; 7];
        assert_eq!(dot(&a, &b), 21.0);
    }

    #[test]
    fn row_results_do_not_depend_on_batch() {
        let x: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..20).map(|i| (i as f64 * 0.11).cos()).collect();
        let batched = linear_forward(&x, 3, &w, 4, None);
        let single = linear_forward(&x[5..10], 1, &w, 4, None);
        assert_eq!(&batched[4..8], &single[..]);
    }

    #[test]
    fn log_add_exp_of_neg_inf() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, -1.0), -1.0);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
