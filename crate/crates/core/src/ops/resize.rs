//! Bilinear resampling with half-pixel centers (`align_corners = false`).

use crate::scalar::{c, Scalar};

#[derive(Clone, Debug)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    w1: T,
}

fn taps<T: Scalar>(len_in: usize, len_out: usize) -> Vec<Tap<T>> {
    let scale = len_in as f64 / len_out as f64;
    (0..len_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len_in - 1);
            let i1 = (i0 + 1).min(len_in - 1);
            Tap { i0, i1, w1: c::<T>(src - i0 as f64) }
        })
        .collect()
}

/// Resize `planes` planes of `h×w` to `ho×wo`.
pub fn bilinear<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<T> {
    let ty = taps::<T>(h, ho);
    let tx = taps::<T>(w, wo);
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for (oy, a) in ty.iter().enumerate() {
            let wy0 = T::one() - a.w1;
            for (ox, b) in tx.iter().enumerate() {
                let wx0 = T::one() - b.w1;
                dst[oy * wo + ox] = wy0 * (wx0 * src[a.i0 * w + b.i0] + b.w1 * src[a.i0 * w + b.i1])
                    + a.w1 * (wx0 * src[a.i1 * w + b.i0] + b.w1 * src[a.i1 * w + b.i1]);
            }
        }
    }
    out
}

pub fn bilinear_backward<T: Scalar>(dy: &[T], dx: &mut [T], planes: usize, h: usize, w: usize, ho: usize, wo: usize) {
    let ty = taps::<T>(h, ho);
    let tx = taps::<T>(w, wo);
    for p in 0..planes {
        let g = &dy[p * ho * wo..(p + 1) * ho * wo];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, a) in ty.iter().enumerate() {
            let wy0 = T::one() - a.w1;
            for (ox, b) in tx.iter().enumerate() {
                let wx0 = T::one() - b.w1;
                let v = g[oy * wo + ox];
                d[a.i0 * w + b.i0] += v * wy0 * wx0;
                d[a.i0 * w + b.i1] += v * wy0 * b.w1;
                d[a.i1 * w + b.i0] += v * a.w1 * wx0;
                d[a.i1 * w + b.i1] += v * a.w1 * b.w1;
            }
        }
    }
}
