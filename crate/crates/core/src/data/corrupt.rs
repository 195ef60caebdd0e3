//! Intensity corruptions: brightness, motion blur, Poisson noise and random
//! pixel masking. Used on images (values kept in `[0, 1]`) and directly on
//! feature maps (no clamping).

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAX_BLUR_LENGTH: usize = 31;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Corruption {
    /// Multiply by `factor` in `[0, 10]`.
    Brightness { factor: f64 },
    /// Line kernel of odd `length` in `1..=31` at an angle drawn from the seed.
    MotionBlur { length: usize },
    /// `Poisson(v · scale) / scale` with `scale` in `(0, 1e6]`.
    Poisson { scale: f64 },
    /// Zero each value independently with probability `p`.
    RandMask { p: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    Brightness,
    MotionBlur,
    Poisson,
    RandMask,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] =
        [CorruptionKind::Brightness, CorruptionKind::MotionBlur, CorruptionKind::Poisson, CorruptionKind::RandMask];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::MotionBlur => "motion_blur",
            CorruptionKind::Poisson => "poisson",
            CorruptionKind::RandMask => "rand_mask",
        }
    }

    /// Corruption of this kind with strength `s`; `None` picks the default.
    pub fn with_strength(self, s: Option<f64>) -> Result<Corruption> {
        let c = match self {
            CorruptionKind::Brightness => Corruption::Brightness { factor: s.unwrap_or(1.3) },
            CorruptionKind::MotionBlur => {
                let l = s.unwrap_or(5.0);
                if l.fract() != 0.0 || l < 1.0 {
                    return Err(contract_err!("motion blur length must be a positive integer, got {l}"));
                }
                Corruption::MotionBlur { length: l as usize }
            }
            CorruptionKind::Poisson => Corruption::Poisson { scale: s.unwrap_or(30.0) },
            CorruptionKind::RandMask => Corruption::RandMask { p: s.unwrap_or(0.1) },
        };
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| contract_err!("unknown corruption kind {s:?}; expected brightness, motion_blur, poisson or rand_mask"))
    }
}

impl Corruption {
    pub fn kind(&self) -> CorruptionKind {
        match self {
            Corruption::Brightness { .. } => CorruptionKind::Brightness,
            Corruption::MotionBlur { .. } => CorruptionKind::MotionBlur,
            Corruption::Poisson { .. } => CorruptionKind::Poisson,
            Corruption::RandMask { .. } => CorruptionKind::RandMask,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Corruption::Brightness { factor } => (0.0..=10.0).contains(&factor),
            Corruption::MotionBlur { length } => length % 2 == 1 && length <= MAX_BLUR_LENGTH,
            Corruption::Poisson { scale } => scale > 0.0 && scale <= 1e6,
            Corruption::RandMask { p } => (0.0..=1.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(contract_err!("corruption parameters out of range: {self:?}"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    #[serde(flatten)]
    pub corruption: Corruption,
    #[serde(default)]
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(corruption: Corruption, seed: u64) -> Self {
        CorruptionSpec { corruption, seed }
    }
}

/// Ranges from which training-time corruptions are drawn. The family is
/// uniform over the four kinds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionPolicy {
    pub brightness: (f64, f64),
    /// Odd lengths in this inclusive range.
    pub blur_length: (usize, usize),
    pub poisson_scale: (f64, f64),
    pub mask_p: (f64, f64),
}

impl Default for CorruptionPolicy {
    fn default() -> Self {
        CorruptionPolicy { brightness: (0.7, 1.3), blur_length: (3, 7), poisson_scale: (20.0, 80.0), mask_p: (0.1, 0.3) }
    }
}

impl CorruptionPolicy {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CorruptionSpec {
        let uni = |rng: &mut R, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let corruption = match rng.random_range(0..4) {
            0 => Corruption::Brightness { factor: uni(rng, self.brightness) },
            1 => {
                let (lo, hi) = (self.blur_length.0 / 2, self.blur_length.1.max(self.blur_length.0) / 2);
                Corruption::MotionBlur { length: 2 * rng.random_range(lo..=hi) + 1 }
            }
            2 => Corruption::Poisson { scale: uni(rng, self.poisson_scale) },
            _ => Corruption::RandMask { p: uni(rng, self.mask_p) },
        };
        CorruptionSpec::new(corruption, rng.random())
    }
}

/// Normalized `size × size` line kernel through the center at angle `theta`.
pub fn motion_kernel(length: usize, theta: f64) -> Vec<f64> {
    let size = length;
    let mut k = vec![0.0; size * size];
    let mid = (size / 2) as f64;
    let steps = 4 * length;
    let half = (length as f64 - 1.0) / 2.0;
    for s in 0..=steps {
        let t = -half + (2.0 * half) * s as f64 / steps.max(1) as f64;
        let (y, x) = (mid + t * theta.sin(), mid + t * theta.cos());
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let (yy, xx) = (y0 as isize + dy, x0 as isize + dx);
                if (0..size as isize).contains(&yy) && (0..size as isize).contains(&xx) && wy * wx > 0.0 {
                    k[yy as usize * size + xx as usize] += wy * wx;
                }
            }
        }
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

fn blur_plane<T: Scalar>(src: &[T], dst: &mut [T], h: usize, w: usize, kernel: &[f64], size: usize) {
    let r = (size / 2) as isize;
    let kt: Vec<T> = kernel.iter().map(|&v| T::from_f64_lossy(v)).collect();
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for ky in 0..size {
                let yy = (y as isize + ky as isize - r).clamp(0, h as isize - 1) as usize;
                for kx in 0..size {
                    let kv = kt[ky * size + kx];
                    if kv == T::zero() {
                        continue;
                    }
                    let xx = (x as isize + kx as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += kv * src[yy * w + xx];
                }
            }
            dst[y * w + x] = acc;
        }
    }
}

/// Apply to every trailing `h × w` plane of `x`; `clamp` keeps values in `[0, 1]`.
fn apply<T: Scalar>(x: &Tensor<T>, spec: &CorruptionSpec, clamp: bool) -> Result<Tensor<T>> {
    spec.corruption.validate()?;
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(contract_err!("corruption needs a spatial tensor, got shape {shape:?}"));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let src = x.data();
    let mut out = src.to_vec();
    match spec.corruption {
        Corruption::Brightness { factor } => {
            let f = T::from_f64_lossy(factor);
            out.iter_mut().for_each(|v| *v *= f);
        }
        Corruption::MotionBlur { length } => {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let kernel = motion_kernel(length, theta);
            for (s, d) in src.chunks(h * w).zip(out.chunks_mut(h * w)) {
                blur_plane(s, d, h, w, &kernel, length);
            }
        }
        Corruption::Poisson { scale } => {
            for v in out.iter_mut() {
                let mag = v.to_f64_lossy().abs();
                let lambda = mag * scale;
                let draw = if lambda > 0.0 {
                    Poisson::new(lambda).map_err(|e| Error::NumericDomain(format!("poisson rate {lambda}: {e}")))?.sample(&mut rng)
                } else {
                    0.0
                };
                *v = T::from_f64_lossy(draw / scale).copysign(*v);
            }
        }
        Corruption::RandMask { p } => {
            for v in out.iter_mut() {
                if rng.random::<f64>() < p {
                    *v = T::zero();
                }
            }
        }
    }
    if clamp {
        out.iter_mut().for_each(|v| *v = v.max(T::zero()).min(T::one()));
    }
    Tensor::new(shape, out)
}

/// Corrupt an image with values in `[0, 1]`; the result stays in `[0, 1]`.
pub fn corrupt<T: Scalar>(image: &Tensor<T>, spec: &CorruptionSpec) -> Result<Tensor<T>> {
    if image.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(contract_err!("image values must lie in [0, 1]"));
    }
    apply(image, spec, true)
}

/// The same corruptions applied per channel plane of an `[N, C, H, W]` feature
/// map, without clamping. Poisson noise acts on magnitudes and keeps signs.
pub fn feature_spatial_aug<T: Scalar>(f: &Tensor<T>, spec: &CorruptionSpec) -> Result<Tensor<T>> {
    f.dims4()?;
    apply(f, spec, false)
}
