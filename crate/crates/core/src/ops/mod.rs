//! Forward and adjoint kernels on raw buffers.
//!
//! These carry no autodiff state; [`crate::autodiff::Tape`] records which
//! kernel produced each value and calls the matching adjoint during backward.

pub mod activation;
pub mod conv;
pub mod haar;
pub mod linalg;
pub mod reduce;
pub mod resize;

/// Range of `i` in `[0, len_i)` such that `i * stride + k - pad` lands in `[0, len_j)`.
#[inline]
pub(crate) fn valid_range(len_i: usize, len_j: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    if len_j + pad < k + 1 {
        return (0, 0);
    }
    let hi = ((len_j - 1 + pad - k) / stride + 1).min(len_i);
    (lo.min(hi), hi)
}
