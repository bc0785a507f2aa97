//! Plain loops behind the graph ops. All matrices are row-major.

use crate::array::{strides, Real};

/// `c[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm_nn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[m,k] += g[m,n] · b[k,n]ᵀ`
pub(crate) fn gemm_nt<T: Real>(g: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot = grow.iter().zip(brow).fold(T::zero(), |s, (&x, &y)| s + x * y);
            c[i * k + p] = c[i * k + p] + dot;
        }
    }
}

/// `c[k,n] += a[m,k]ᵀ · g[m,n]`
pub(crate) fn gemm_tn<T: Real>(a: &[T], g: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &gv) in crow.iter_mut().zip(grow) {
                *cv = *cv + av * gv;
            }
        }
    }
}

/// Output axis `i` is input axis `axes[i]`.
pub(crate) fn permute<T: Real>(src: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = src.len();
    let nd = out_shape.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    let mut idx = vec![0usize; nd];
    let mut cur = 0usize;
    for _ in 0..total {
        out.push(src[cur]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            cur += step[d];
            if idx[d] < out_shape[d] {
                break;
            }
            cur -= step[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

/// Softmax (or log-softmax) along the middle axis of an `(outer, n, inner)` view.
pub(crate) fn softmax_inplace<T: Real>(x: &mut [T], outer: usize, n: usize, inner: usize, log: bool) {
    for o in 0..outer {
        for c in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + c;
            let mut max = T::neg_infinity();
            for j in 0..n {
                if x[idx(j)] > max {
                    max = x[idx(j)];
                }
            }
            let mut total = T::zero();
            for j in 0..n {
                total = total + (x[idx(j)] - max).exp();
            }
            if log {
                let lse = max + total.ln();
                for j in 0..n {
                    x[idx(j)] = x[idx(j)] - lse;
                }
            } else {
                for j in 0..n {
                    x[idx(j)] = (x[idx(j)] - max).exp() / total;
                }
            }
        }
    }
}
