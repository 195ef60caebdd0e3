//! Single-level orthonormal 2D Haar analysis and synthesis on planes.
//!
//! For each disjoint 2×2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! LL = (a + b + c + d) / 2    LH = (a - b + c - d) / 2
//! HL = (a + b - c - d) / 2    HH = (a - b - c + d) / 2
//! ```
//!
//! LH is high-pass along the horizontal axis and HL along the vertical axis.
//! The 4×4 block matrix is symmetric and orthogonal, so synthesis uses the same
//! signs. Odd extents are reflect-padded by one row/column before analysis
//! (the extra row at index `h` copies row `h - 2`) and cropped after synthesis.

use serde::{Deserialize, Serialize};

use crate::scalar::{c, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Band {
    LL,
    LH,
    HL,
    HH,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::LL, Band::LH, Band::HL, Band::HH];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::LL => "LL",
            Band::LH => "LH",
            Band::HL => "HL",
            Band::HH => "HH",
        }
    }

    /// Signs applied to block pixels `[a, b, c, d]`.
    fn signs(self) -> [f64; 4] {
        match self {
            Band::LL => [1.0, 1.0, 1.0, 1.0],
            Band::LH => [1.0, -1.0, 1.0, -1.0],
            Band::HL => [1.0, 1.0, -1.0, -1.0],
            Band::HH => [1.0, -1.0, -1.0, 1.0],
        }
    }
}

pub fn half_extent(n: usize) -> usize {
    n.div_ceil(2)
}

#[inline]
fn reflect(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        2 * n - 2 - i
    }
}

/// One sub-band of `planes` planes of `h×w`. With `reflect_pad` false, the
/// padding row/column reads as zero (used for the adjoint of cropping).
pub fn analysis_band<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, band: Band, reflect_pad: bool) -> Vec<T> {
    let (hh, ww) = (half_extent(h), half_extent(w));
    let s = band.signs().map(|v| c::<T>(v * 0.5));
    let mut out = vec![T::zero(); planes * hh * ww];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let px = |r: usize, col: usize| -> T {
            if r < h && col < w {
                src[r * w + col]
            } else if reflect_pad {
                src[reflect(r, h) * w + reflect(col, w)]
            } else {
                T::zero()
            }
        };
        let dst = &mut out[p * hh * ww..(p + 1) * hh * ww];
        for i in 0..hh {
            for j in 0..ww {
                let (r, col) = (2 * i, 2 * j);
                dst[i * ww + j] = s[0] * px(r, col) + s[1] * px(r, col + 1) + s[2] * px(r + 1, col) + s[3] * px(r + 1, col + 1);
            }
        }
    }
    out
}

/// Accumulate the adjoint of `analysis_band(.., reflect_pad = true)` into `dx`.
pub fn analysis_band_adjoint<T: Scalar>(g: &[T], dx: &mut [T], planes: usize, h: usize, w: usize, band: Band) {
    let (hh, ww) = (half_extent(h), half_extent(w));
    let s = band.signs().map(|v| c::<T>(v * 0.5));
    for p in 0..planes {
        let gp = &g[p * hh * ww..(p + 1) * hh * ww];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..hh {
            for j in 0..ww {
                let v = gp[i * ww + j];
                let (r, col) = (2 * i, 2 * j);
                for (k, (dr, dc)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let (rr, cc) = (reflect(r + dr, h), reflect(col + dc, w));
                    d[rr * w + cc] += s[k] * v;
                }
            }
        }
    }
}

/// Inverse transform, cropped to `h×w`.
pub fn synthesis<T: Scalar>(bands: [&[T]; 4], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (hh, ww) = (half_extent(h), half_extent(w));
    let half = c::<T>(0.5);
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let off = p * hh * ww;
        let d = &mut out[p * h * w..(p + 1) * h * w];
        for i in 0..hh {
            for j in 0..ww {
                let k = off + i * ww + j;
                let (ll, lh, hl, hhv) = (bands[0][k], bands[1][k], bands[2][k], bands[3][k]);
                let block = [
                    (ll + lh + hl + hhv) * half,
                    (ll - lh + hl - hhv) * half,
                    (ll + lh - hl - hhv) * half,
                    (ll - lh - hl + hhv) * half,
                ];
                for (q, (dr, dc)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let (r, col) = (2 * i + dr, 2 * j + dc);
                    if r < h && col < w {
                        d[r * w + col] = block[q];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`synthesis`]: zero-pad then analyse.
pub fn synthesis_adjoint<T: Scalar>(g: &[T], planes: usize, h: usize, w: usize) -> [Vec<T>; 4] {
    Band::ALL.map(|b| analysis_band(g, planes, h, w, b, false))
}
