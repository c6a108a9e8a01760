//! Raw-slice numeric kernels behind the graph ops.
//!
//! Everything here works on flat row-major `f64` buffers with explicit
//! dimensions; shape validation happens one layer up in the graph. Loop
//! nests are written so the innermost axis is contiguous on both sides,
//! which lets the compiler vectorize them.

use crate::math;
use alloc::vec;
use alloc::vec::Vec;

/// `c[m,n] += a[m,k] @ b[k,n]`, i-k-j loop order.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// Out-of-place transpose of a `rows x cols` matrix.
pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * cols);
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Unfolds one image `[cin,h,w]` into columns `[cin*k*k, h_out*w_out]`
/// for a `k x k` kernel with the given stride and symmetric zero padding.
pub(crate) fn im2col(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
) -> Vec<f64> {
    let cols = h_out * w_out;
    let mut col = vec![0.0; cin * k * k * cols];
    for ci in 0..cin {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let dst_base = ((ci * k + kh) * k + kw) * cols;
                for ho in 0..h_out {
                    let ih = (ho * stride + kh) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let xrow = &xc[ih as usize * w..(ih as usize + 1) * w];
                    let dst = &mut col[dst_base + ho * w_out..dst_base + (ho + 1) * w_out];
                    for (wo, d) in dst.iter_mut().enumerate() {
                        let iw = (wo * stride + kw) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            *d = xrow[iw as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-adds a column gradient back into an image gradient; the exact
/// adjoint of [`im2col`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_acc(
    dcol: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
    dx: &mut [f64],
) {
    let cols = h_out * w_out;
    for ci in 0..cin {
        let dxc = &mut dx[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let src_base = ((ci * k + kh) * k + kw) * cols;
                for ho in 0..h_out {
                    let ih = (ho * stride + kh) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = &dcol[src_base + ho * w_out..src_base + (ho + 1) * w_out];
                    let drow = &mut dxc[ih as usize * w..(ih as usize + 1) * w];
                    for (wo, &s) in src.iter().enumerate() {
                        let iw = (wo * stride + kw) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            drow[iw as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

/// 1-D unfold of `[cin,l]` into `[cin*k, l_out]`, stride 1.
pub(crate) fn im2col1d(x: &[f64], cin: usize, l: usize, k: usize, pad: usize, l_out: usize) -> Vec<f64> {
    let mut col = vec![0.0; cin * k * l_out];
    for ci in 0..cin {
        let xc = &x[ci * l..(ci + 1) * l];
        for kk in 0..k {
            let dst = &mut col[(ci * k + kk) * l_out..(ci * k + kk + 1) * l_out];
            for (lo, d) in dst.iter_mut().enumerate() {
                let il = (lo + kk) as isize - pad as isize;
                if il >= 0 && il < l as isize {
                    *d = xc[il as usize];
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col1d`].
pub(crate) fn col2im1d_acc(dcol: &[f64], cin: usize, l: usize, k: usize, pad: usize, l_out: usize, dx: &mut [f64]) {
    for ci in 0..cin {
        let dxc = &mut dx[ci * l..(ci + 1) * l];
        for kk in 0..k {
            let src = &dcol[(ci * k + kk) * l_out..(ci * k + kk + 1) * l_out];
            for (lo, &s) in src.iter().enumerate() {
                let il = (lo + kk) as isize - pad as isize;
                if il >= 0 && il < l as isize {
                    dxc[il as usize] += s;
                }
            }
        }
    }
}

/// Per-channel biased mean and variance over a `[b,c,inner]` buffer.
pub(crate) fn bn_stats(x: &[f64], b: usize, c: usize, inner: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (b * inner) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for bi in 0..b {
        for ci in 0..c {
            let xs = &x[(bi * c + ci) * inner..(bi * c + ci + 1) * inner];
            mean[ci] += xs.iter().sum::<f64>();
        }
    }
    for mv in mean.iter_mut() {
        *mv /= m;
    }
    for bi in 0..b {
        for ci in 0..c {
            let mu = mean[ci];
            let xs = &x[(bi * c + ci) * inner..(bi * c + ci + 1) * inner];
            var[ci] += xs.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>();
        }
    }
    for vv in var.iter_mut() {
        *vv /= m;
    }
    (mean, var)
}

/// Normalizes with the given per-channel statistics and affine parameters.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_apply(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    inv_std: &[f64],
    b: usize,
    c: usize,
    inner: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let (mu, s, g, be) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
            let base = (bi * c + ci) * inner;
            for i in 0..inner {
                y[base + i] = g * (x[base + i] - mu) * s + be;
            }
        }
    }
    y
}

pub(crate) fn inv_std_from_var(var: &[f64], eps: f64) -> Vec<f64> {
    var.iter().map(|&v| 1.0 / math::sqrt(v + eps)).collect()
}

/// Softmax over the last axis of a `[rows, cols]` buffer, max-subtracted.
pub(crate) fn row_softmax(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for r in 0..rows {
        let xs = &x[r * cols..(r + 1) * cols];
        let ys = &mut y[r * cols..(r + 1) * cols];
        let mx = xs.iter().fold(f64::NEG_INFINITY, |a, &b| if b > a { b } else { a });
        let mut sum = 0.0;
        for (yv, &xv) in ys.iter_mut().zip(xs) {
            *yv = math::exp(xv - mx);
            sum += *yv;
        }
        for yv in ys.iter_mut() {
            *yv /= sum;
        }
    }
    y
}
