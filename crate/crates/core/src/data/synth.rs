//! Seeded synthetic segmentation samples: one to three filled ellipses or
//! rectangles of distinct classes over a smooth textured background.
//!
//! The image is rendered with `supersample²` sub-pixel samples per pixel; the
//! mask labels each pixel with the topmost shape containing its center.
//! Images are quantized to 8-bit levels so they survive PGM round-trips.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};
use crate::metrics::LabelMask;
use crate::ops::resize;
use crate::tensor::Tensor;

use super::pnm::quantize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub max_shapes: usize,
    /// Accepted foreground area fraction `[min, max]`.
    pub fg_fraction: (f64, f64),
    /// Semi-axis range as a fraction of the shorter image side.
    pub radius: (f64, f64),
    /// Side of the coarse noise grid that is upsampled into the background.
    pub background_grid: usize,
    pub background_level: f64,
    pub background_amp: f64,
    pub pixel_noise: f64,
    pub supersample: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            num_classes: 3,
            max_shapes: 3,
            fg_fraction: (0.05, 0.40),
            radius: (0.08, 0.25),
            background_grid: 6,
            background_level: 0.15,
            background_amp: 0.2,
            pixel_noise: 0.02,
            supersample: 4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.fg_fraction;
        let (rlo, rhi) = self.radius;
        if self.height < 8 || self.width < 8 {
            return Err(contract_err!("synthetic images must be at least 8x8"));
        }
        if !(2..=256).contains(&self.num_classes) || self.max_shapes == 0 {
            return Err(contract_err!("need 2..=256 classes and at least one shape"));
        }
        if !(0.0 <= lo && lo < hi && hi <= 1.0) || !(0.0 < rlo && rlo <= rhi && rhi <= 0.5) {
            return Err(contract_err!("bad area or radius range: {:?} {:?}", self.fg_fraction, self.radius));
        }
        if self.background_grid < 2 || self.supersample == 0 {
            return Err(contract_err!("background grid >= 2 and supersample >= 1 required"));
        }
        Ok(())
    }

    /// Mean intensity of class `c >= 1`; evenly spaced above the background.
    pub fn class_level(&self, c: usize) -> f64 {
        0.45 + 0.45 * c as f64 / (self.num_classes - 1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub kind: ShapeKind,
    pub class: u8,
    /// Center `(y, x)` in pixel coordinates.
    pub center: (f64, f64),
    /// Semi-axes `(ry, rx)` in pixels.
    pub radii: (f64, f64),
    pub angle: f64,
    pub intensity: f64,
}

impl ShapeParams {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.center.0, x - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        let (ry, rx) = self.radii;
        match self.kind {
            ShapeKind::Ellipse => (u / rx).powi(2) + (v / ry).powi(2) <= 1.0,
            ShapeKind::Rectangle => u.abs() <= rx && v.abs() <= ry,
        }
    }

    fn extent(&self) -> f64 {
        let (ry, rx) = self.radii;
        match self.kind {
            ShapeKind::Ellipse => ry.max(rx),
            ShapeKind::Rectangle => ry.hypot(rx),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[1, H, W]` with values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `[1, H, W]`.
    pub mask: LabelMask,
    pub seed: u64,
    /// Painting order, bottom first.
    pub shapes: Vec<ShapeParams>,
}

impl Sample {
    pub fn foreground_fraction(&self) -> f64 {
        let d = self.mask.data();
        d.iter().filter(|&&v| v != 0).count() as f64 / d.len() as f64
    }
}

const MAX_ATTEMPTS: usize = 1000;

fn draw_shapes(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<ShapeParams> {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let side = h.min(w);
    let count = rng.random_range(1..=cfg.max_shapes.min(cfg.num_classes - 1));
    let mut classes: Vec<usize> = (1..cfg.num_classes).collect();
    classes.shuffle(rng);
    classes[..count]
        .iter()
        .map(|&class| {
            let kind = if rng.random::<bool>() { ShapeKind::Ellipse } else { ShapeKind::Rectangle };
            let radii = (
                rng.random_range(cfg.radius.0..=cfg.radius.1) * side,
                rng.random_range(cfg.radius.0..=cfg.radius.1) * side,
            );
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let intensity = (cfg.class_level(class) + rng.random_range(-0.04..=0.04)).clamp(0.0, 1.0);
            let mut s = ShapeParams { kind, class: class as u8, center: (0.0, 0.0), radii, angle, intensity };
            let r = s.extent();
            let pick = |rng: &mut ChaCha8Rng, len: f64| if 2.0 * r < len { rng.random_range(r..=len - r) } else { len / 2.0 };
            s.center = (pick(rng, h), pick(rng, w));
            s
        })
        .collect()
}

fn rasterize_mask(cfg: &SynthConfig, shapes: &[ShapeParams]) -> Vec<u8> {
    let mut m = vec![0u8; cfg.height * cfg.width];
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            if let Some(s) = shapes.iter().rev().find(|s| s.contains(py, px)) {
                m[y * cfg.width + x] = s.class;
            }
        }
    }
    m
}

fn acceptable(cfg: &SynthConfig, shapes: &[ShapeParams], mask: &[u8]) -> bool {
    let n = mask.len() as f64;
    let fg = mask.iter().filter(|&&v| v != 0).count() as f64 / n;
    let visible = shapes
        .iter()
        .all(|s| mask.iter().filter(|&&v| v == s.class).count() as f64 >= 0.005 * n);
    fg >= cfg.fg_fraction.0 && fg <= cfg.fg_fraction.1 && visible
}

fn background(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g = cfg.background_grid;
    let coarse: Vec<f64> = (0..g * g).map(|_| rng.random::<f64>()).collect();
    resize::bilinear(&coarse, 1, g, g, cfg.height, cfg.width)
        .into_iter()
        .map(|v| cfg.background_level + cfg.background_amp * v)
        .collect()
}

/// Deterministic sample for `seed`.
pub fn gen_sample(seed: u64, cfg: &SynthConfig) -> Result<Sample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut shapes, mut mask) = (Vec::new(), Vec::new());
    for _ in 0..MAX_ATTEMPTS {
        shapes = draw_shapes(cfg, &mut rng);
        mask = rasterize_mask(cfg, &shapes);
        if acceptable(cfg, &shapes, &mask) {
            break;
        }
    }
    if !acceptable(cfg, &shapes, &mask) {
        return Err(contract_err!("no shape layout met the area constraints for seed {seed}"));
    }
    let bg = background(cfg, &mut rng);
    let noise = Normal::new(0.0, cfg.pixel_noise.max(0.0)).expect("finite std");
    let (h, w, ss) = (cfg.height, cfg.width, cfg.supersample);
    let mut img = vec![0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for sy in 0..ss {
                for sx in 0..ss {
                    let py = y as f64 + (sy as f64 + 0.5) / ss as f64;
                    let px = x as f64 + (sx as f64 + 0.5) / ss as f64;
                    acc += shapes.iter().rev().find(|s| s.contains(py, px)).map_or(bg[y * w + x], |s| s.intensity);
                }
            }
            let v = acc / (ss * ss) as f64 + noise.sample(&mut rng);
            img[y * w + x] = quantize(v) as f32 / 255.0;
        }
    }
    Ok(Sample {
        id: format!("s{seed}"),
        image: Tensor::new(&[1, h, w], img)?,
        mask: LabelMask::new([1, h, w], mask, cfg.num_classes)?,
        seed,
        shapes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Test seeds start here, keeping both splits disjoint.
    pub const TEST_OFFSET: u64 = 1 << 32;

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn seed(self, base: u64, i: usize) -> u64 {
        let off = match self {
            Split::Train => 0,
            Split::Test => Self::TEST_OFFSET,
        };
        base.wrapping_add(off).wrapping_add(i as u64)
    }
}

/// `count` samples named `<split>-<index>`.
pub fn generate_split(cfg: &SynthConfig, base_seed: u64, split: Split, count: usize) -> Result<Vec<Sample>> {
    if count as u64 >= Split::TEST_OFFSET {
        return Err(contract_err!("too many samples for one split"));
    }
    (0..count)
        .map(|i| {
            let mut s = gen_sample(split.seed(base_seed, i), cfg)?;
            s.id = format!("{}-{i:04}", split.name());
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let cfg = SynthConfig::default();
        let a = gen_sample(11, &cfg).unwrap();
        let b = gen_sample(11, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.mask.data().iter().all(|&v| (v as usize) < cfg.num_classes));
        assert!(a.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_ne!(a, gen_sample(12, &cfg).unwrap());
    }

    #[test]
    fn rectangle_contains() {
        let s = ShapeParams {
            kind: ShapeKind::Rectangle,
            class: 1,
            center: (10.0, 10.0),
            radii: (2.0, 4.0),
            angle: 0.0,
            intensity: 1.0,
        };
        assert!(s.contains(11.9, 13.9));
        assert!(!s.contains(12.1, 10.0));
        assert!(!s.contains(10.0, 14.1));
    }

    #[test]
    fn splits_are_disjoint() {
        let cfg = SynthConfig { height: 16, width: 16, ..Default::default() };
        let tr = generate_split(&cfg, 5, Split::Train, 3).unwrap();
        let te = generate_split(&cfg, 5, Split::Test, 3).unwrap();
        for a in &tr {
            assert!(te.iter().all(|b| b.seed != a.seed && b.id != a.id));
        }
    }
}
