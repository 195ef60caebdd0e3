//! 2D convolution and transposed convolution on `[N, C, H, W]` buffers.
//!
//! `conv2d` is a cross-correlation: the kernel is not flipped.
//! Kernels are `[O, C, kh, kw]` for `conv2d` and `[C, O, kh, kw]` for
//! `conv_transpose2d`, matching the usual learning-framework layout.

use super::valid_range;
use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn conv(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (&[n, c, h, w], &[o, kc, kh, kw]) = (input, kernel) else {
            return Err(dim_err!("conv2d wants rank-4 input and kernel, got {input:?} and {kernel:?}"));
        };
        if kc != c {
            return Err(dim_err!("conv2d kernel expects {kc} input channels, input has {c}"));
        }
        if stride == 0 {
            return Err(dim_err!("conv2d stride must be >= 1"));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad || kh == 0 || kw == 0 {
            return Err(dim_err!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            ));
        }
        Ok(ConvGeom {
            n,
            c_in: c,
            h,
            w,
            c_out: o,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn transpose(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (&[n, c, h, w], &[kc, o, kh, kw]) = (input, kernel) else {
            return Err(dim_err!(
                "conv_transpose2d wants rank-4 input and kernel, got {input:?} and {kernel:?}"
            ));
        };
        if kc != c {
            return Err(dim_err!("conv_transpose2d kernel expects {kc} input channels, input has {c}"));
        }
        if stride == 0 {
            return Err(dim_err!("conv_transpose2d stride must be >= 1"));
        }
        let full_h = (h - 1) * stride + kh;
        let full_w = (w - 1) * stride + kw;
        if h == 0 || w == 0 || full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(dim_err!("conv_transpose2d padding {pad} consumes the whole output"));
        }
        Ok(ConvGeom {
            n,
            c_in: c,
            h,
            w,
            c_out: o,
            kh,
            kw,
            stride,
            pad,
            ho: full_h - 2 * pad,
            wo: full_w - 2 * pad,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.c_out, self.ho, self.wo]
    }
}

pub fn conv2d<T: Scalar>(g: &ConvGeom, input: &[T], kernel: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (hw_in, hw_out) = (g.h * g.w, g.ho * g.wo);
    let mut out = vec![T::zero(); g.n * g.c_out * hw_out];
    for n in 0..g.n {
        for o in 0..g.c_out {
            let plane = &mut out[(n * g.c_out + o) * hw_out..][..hw_out];
            if let Some(b) = bias {
                plane.iter_mut().for_each(|v| *v = b[o]);
            }
            for c in 0..g.c_in {
                let src = &input[(n * g.c_in + c) * hw_in..][..hw_in];
                for ki in 0..g.kh {
                    let (oy0, oy1) = valid_range(g.ho, g.h, g.stride, ki, g.pad);
                    for kj in 0..g.kw {
                        let wv = kernel[((o * g.c_in + c) * g.kh + ki) * g.kw + kj];
                        let (ox0, ox1) = valid_range(g.wo, g.w, g.stride, kj, g.pad);
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ki - g.pad;
                            let srow = &src[iy * g.w..][..g.w];
                            let orow = &mut plane[oy * g.wo..][..g.wo];
                            if g.stride == 1 {
                                let ix0 = ox0 + kj - g.pad;
                                for (ov, &iv) in orow[ox0..ox1].iter_mut().zip(&srow[ix0..]) {
                                    *ov += wv * iv;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    orow[ox] += wv * srow[ox * g.stride + kj - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoints of [`conv2d`]. Any of the output buffers may be skipped.
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    dout: &[T],
    mut dinput: Option<&mut [T]>,
    mut dkernel: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) {
    let (hw_in, hw_out) = (g.h * g.w, g.ho * g.wo);
    if let Some(db) = dbias {
        for n in 0..g.n {
            for o in 0..g.c_out {
                db[o] += dout[(n * g.c_out + o) * hw_out..][..hw_out].iter().copied().sum();
            }
        }
    }
    for n in 0..g.n {
        for o in 0..g.c_out {
            let dplane = &dout[(n * g.c_out + o) * hw_out..][..hw_out];
            for c in 0..g.c_in {
                let in_base = (n * g.c_in + c) * hw_in;
                for ki in 0..g.kh {
                    let (oy0, oy1) = valid_range(g.ho, g.h, g.stride, ki, g.pad);
                    for kj in 0..g.kw {
                        let widx = ((o * g.c_in + c) * g.kh + ki) * g.kw + kj;
                        let wv = kernel[widx];
                        let (ox0, ox1) = valid_range(g.wo, g.w, g.stride, kj, g.pad);
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ki - g.pad;
                            let drow = &dplane[oy * g.wo..][..g.wo];
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kj - g.pad;
                                let d = drow[ox];
                                let ii = in_base + iy * g.w + ix;
                                if let Some(di) = dinput.as_deref_mut() {
                                    di[ii] += wv * d;
                                }
                                acc += input[ii] * d;
                            }
                        }
                        if let Some(dk) = dkernel.as_deref_mut() {
                            dk[widx] += acc;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_transpose2d<T: Scalar>(g: &ConvGeom, input: &[T], kernel: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (hw_in, hw_out) = (g.h * g.w, g.ho * g.wo);
    let mut out = vec![T::zero(); g.n * g.c_out * hw_out];
    for n in 0..g.n {
        for o in 0..g.c_out {
            let plane = &mut out[(n * g.c_out + o) * hw_out..][..hw_out];
            if let Some(b) = bias {
                plane.iter_mut().for_each(|v| *v = b[o]);
            }
            for c in 0..g.c_in {
                let src = &input[(n * g.c_in + c) * hw_in..][..hw_in];
                for ki in 0..g.kh {
                    let (iy0, iy1) = valid_range(g.h, g.ho, g.stride, ki, g.pad);
                    for kj in 0..g.kw {
                        let wv = kernel[((c * g.c_out + o) * g.kh + ki) * g.kw + kj];
                        let (ix0, ix1) = valid_range(g.w, g.wo, g.stride, kj, g.pad);
                        for iy in iy0..iy1 {
                            let oy = iy * g.stride + ki - g.pad;
                            for ix in ix0..ix1 {
                                let ox = ix * g.stride + kj - g.pad;
                                plane[oy * g.wo + ox] += wv * src[iy * g.w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv_transpose2d_backward<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    dout: &[T],
    mut dinput: Option<&mut [T]>,
    mut dkernel: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) {
    let (hw_in, hw_out) = (g.h * g.w, g.ho * g.wo);
    if let Some(db) = dbias {
        for n in 0..g.n {
            for o in 0..g.c_out {
                db[o] += dout[(n * g.c_out + o) * hw_out..][..hw_out].iter().copied().sum();
            }
        }
    }
    for n in 0..g.n {
        for o in 0..g.c_out {
            let dplane = &dout[(n * g.c_out + o) * hw_out..][..hw_out];
            for c in 0..g.c_in {
                let in_base = (n * g.c_in + c) * hw_in;
                for ki in 0..g.kh {
                    let (iy0, iy1) = valid_range(g.h, g.ho, g.stride, ki, g.pad);
                    for kj in 0..g.kw {
                        let widx = ((c * g.c_out + o) * g.kh + ki) * g.kw + kj;
                        let wv = kernel[widx];
                        let (ix0, ix1) = valid_range(g.w, g.wo, g.stride, kj, g.pad);
                        let mut acc = T::zero();
                        for iy in iy0..iy1 {
                            let oy = iy * g.stride + ki - g.pad;
                            for ix in ix0..ix1 {
                                let ox = ix * g.stride + kj - g.pad;
                                let d = dplane[oy * g.wo + ox];
                                let ii = in_base + iy * g.w + ix;
                                if let Some(di) = dinput.as_deref_mut() {
                                    di[ii] += wv * d;
                                }
                                acc += input[ii] * d;
                            }
                        }
                        if let Some(dk) = dkernel.as_deref_mut() {
                            dk[widx] += acc;
                        }
                    }
                }
            }
        }
    }
}
