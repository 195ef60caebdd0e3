//! Softmax, log-softmax and per-row normalization along one axis.

use crate::scalar::{c, Scalar};

/// Split a shape around `axis` into (outer, axis extent, inner).
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Max-subtracted softmax along the middle axis of `(outer, len, inner)`.
pub fn softmax<T: Scalar>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let m = (0..len).map(|k| x[at(k)]).fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for k in 0..len {
                let e = (x[at(k)] - m).exp();
                y[at(k)] = e;
                s += e;
            }
            for k in 0..len {
                y[at(k)] /= s;
            }
        }
    }
    y
}

/// `dx = y ⊙ (dy − Σ dy⊙y)`
pub fn softmax_backward<T: Scalar>(y: &[T], dy: &[T], dx: &mut [T], outer: usize, len: usize, inner: usize) {
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let dot: T = (0..len).map(|k| dy[at(k)] * y[at(k)]).sum();
            for k in 0..len {
                dx[at(k)] += y[at(k)] * (dy[at(k)] - dot);
            }
        }
    }
}

pub fn log_softmax<T: Scalar>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let m = (0..len).map(|k| x[at(k)]).fold(T::neg_infinity(), T::max);
            let lse = m + (0..len).map(|k| (x[at(k)] - m).exp()).sum::<T>().ln();
            for k in 0..len {
                y[at(k)] = x[at(k)] - lse;
            }
        }
    }
    y
}

/// `dx = dy − softmax · Σ dy`
pub fn log_softmax_backward<T: Scalar>(y: &[T], dy: &[T], dx: &mut [T], outer: usize, len: usize, inner: usize) {
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let s: T = (0..len).map(|k| dy[at(k)]).sum();
            for k in 0..len {
                dx[at(k)] += dy[at(k)] - y[at(k)].exp() * s;
            }
        }
    }
}

/// Zero-mean, unit-variance rows of width `len` (population variance).
/// Returns the normalized values and each row's inverse standard deviation.
pub fn normalize_rows<T: Scalar>(x: &[T], len: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / len;
    let inv_n = T::one() / c::<T>(len as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * len..(r + 1) * len];
        let mean = row.iter().copied().sum::<T>() * inv_n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let is = T::one() / (var + eps).sqrt();
        for (o, &v) in y[r * len..(r + 1) * len].iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
        inv_std.push(is);
    }
    (y, inv_std)
}

/// `dx = inv_std · (dy − mean(dy) − y · mean(dy ⊙ y))`
pub fn normalize_rows_backward<T: Scalar>(y: &[T], inv_std: &[T], dy: &[T], dx: &mut [T], len: usize) {
    let inv_n = T::one() / c::<T>(len as f64);
    for (r, &is) in inv_std.iter().enumerate() {
        let ys = &y[r * len..(r + 1) * len];
        let ds = &dy[r * len..(r + 1) * len];
        let mean_d = ds.iter().copied().sum::<T>() * inv_n;
        let mean_dy = ds.iter().zip(ys).map(|(&d, &v)| d * v).sum::<T>() * inv_n;
        for ((o, &d), &v) in dx[r * len..(r + 1) * len].iter_mut().zip(ds).zip(ys) {
            *o += is * (d - mean_d - v * mean_dy);
        }
    }
}
