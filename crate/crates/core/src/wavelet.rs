//! Haar wavelet analysis/synthesis and wavelet-domain feature augmentation.
//!
//! `wt_aug` decomposes a feature map into LL/LH/HL/HH, multiplies each sub-band
//! by a random binary mask and reconstructs:
//! `F' = idwt(dwt(F) ⊙ masks)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{contract_err, Result};
use crate::ops::haar::{self, half_extent};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use crate::ops::haar::Band;

/// The four sub-bands of one feature map, plus the source extents so that
/// synthesis can crop the reflect padding of odd sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet<T: Scalar> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
    pub source_hw: (usize, usize),
}

impl<T: Scalar> SubbandSet<T> {
    pub fn band(&self, b: Band) -> &Tensor<T> {
        match b {
            Band::LL => &self.ll,
            Band::LH => &self.lh,
            Band::HL => &self.hl,
            Band::HH => &self.hh,
        }
    }

    pub fn energy(&self) -> T {
        Band::ALL
            .iter()
            .map(|&b| self.band(b).data().iter().map(|&v| v * v).sum::<T>())
            .sum()
    }
}

/// Binary masks for `[LL, LH, HL, HH]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet<T: Scalar> {
    pub masks: [Tensor<T>; 4],
}

impl<T: Scalar> MaskSet<T> {
    pub fn ones(shape: &[usize]) -> Result<Self> {
        let one = Tensor::ones(shape)?;
        Ok(MaskSet { masks: [one.clone(), one.clone(), one.clone(), one] })
    }

    /// Masks that keep exactly the bands flagged in `keep`.
    pub fn keep_only(shape: &[usize], keep: [bool; 4]) -> Result<Self> {
        let make = |on: bool| if on { Tensor::ones(shape) } else { Tensor::zeros(shape) };
        Ok(MaskSet { masks: [make(keep[0])?, make(keep[1])?, make(keep[2])?, make(keep[3])?] })
    }

    pub fn band(&self, b: Band) -> &Tensor<T> {
        &self.masks[b.index()]
    }

    pub fn is_all_ones(&self) -> bool {
        self.masks.iter().all(|m| m.data().iter().all(|&v| v == T::one()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WtAugConfig {
    /// Bernoulli keep probability for `[LL, LH, HL, HH]`.
    pub keep_prob: [f64; 4],
    pub seed: u64,
    /// One mask per spatial location shared by every batch item and channel.
    pub channel_shared: bool,
}

impl Default for WtAugConfig {
    fn default() -> Self {
        WtAugConfig { keep_prob: [0.8; 4], seed: 0, channel_shared: true }
    }
}

impl WtAugConfig {
    pub fn uniform(p: f64) -> Self {
        WtAugConfig { keep_prob: [p; 4], ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.keep_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(contract_err!("keep_prob values must lie in [0, 1], got {:?}", self.keep_prob));
        }
        Ok(())
    }

    /// Every mask is certainly all-ones, so the augmentation is the identity map.
    pub fn is_identity(&self) -> bool {
        self.keep_prob.iter().all(|&p| p >= 1.0)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

fn check_rank4<T: Scalar>(f: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    let dims = f.dims4()?;
    if dims.2 < 2 || dims.3 < 2 {
        return Err(contract_err!("haar analysis needs H, W >= 2, got {}x{}", dims.2, dims.3));
    }
    Ok(dims)
}

pub fn haar_dwt2<T: Scalar>(f: &Tensor<T>) -> Result<SubbandSet<T>> {
    let (n, c, h, w) = check_rank4(f)?;
    let shape = [n, c, half_extent(h), half_extent(w)];
    let band = |b| Tensor::new(&shape, haar::analysis_band(f.data(), n * c, h, w, b, true));
    Ok(SubbandSet {
        ll: band(Band::LL)?,
        lh: band(Band::LH)?,
        hl: band(Band::HL)?,
        hh: band(Band::HH)?,
        source_hw: (h, w),
    })
}

pub fn haar_idwt2<T: Scalar>(s: &SubbandSet<T>) -> Result<Tensor<T>> {
    let shape = s.ll.shape();
    if Band::ALL.iter().any(|&b| s.band(b).shape() != shape) {
        return Err(contract_err!("sub-band shapes differ"));
    }
    let (n, c, hh, ww) = s.ll.dims4()?;
    let (h, w) = s.source_hw;
    if half_extent(h) != hh || half_extent(w) != ww {
        return Err(contract_err!("sub-bands {hh}x{ww} do not match source {h}x{w}"));
    }
    let out = haar::synthesis([s.ll.data(), s.lh.data(), s.hl.data(), s.hh.data()], n * c, h, w);
    Tensor::new(&[n, c, h, w], out)
}

/// Draw four Bernoulli masks for sub-bands of shape `band_shape = [N, C, h, w]`.
/// With `channel_shared` the masks are `[1, 1, h, w]`.
pub fn make_masks<T: Scalar, R: Rng + ?Sized>(band_shape: [usize; 4], cfg: &WtAugConfig, rng: &mut R) -> Result<MaskSet<T>> {
    cfg.validate()?;
    let [n, c, h, w] = band_shape;
    let shape = if cfg.channel_shared { [1, 1, h, w] } else { [n, c, h, w] };
    let mut draw = |p: f64| Tensor::from_fn(&shape, |_| if rng.random::<f64>() < p { T::one() } else { T::zero() });
    Ok(MaskSet {
        masks: [draw(cfg.keep_prob[0])?, draw(cfg.keep_prob[1])?, draw(cfg.keep_prob[2])?, draw(cfg.keep_prob[3])?],
    })
}

/// Sub-band shape for a rank-4 map.
pub fn band_shape<T: Scalar>(f: &Tensor<T>) -> Result<[usize; 4]> {
    let (n, c, h, w) = check_rank4(f)?;
    Ok([n, c, half_extent(h), half_extent(w)])
}

pub fn wt_aug_with_masks<T: Scalar>(f: &Tensor<T>, masks: &MaskSet<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(f.detached());
    let y = wt_aug_on_tape(&mut tape, x, masks)?;
    Ok(tape.value(y).detached())
}

pub fn wt_aug<T: Scalar, R: Rng + ?Sized>(f: &Tensor<T>, cfg: &WtAugConfig, rng: &mut R) -> Result<Tensor<T>> {
    let masks = make_masks(band_shape(f)?, cfg, rng)?;
    wt_aug_with_masks(f, &masks)
}

/// Sub-band vars `[LL, LH, HL, HH]` of a recorded map.
pub fn dwt_on_tape<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<[Var; 4]> {
    Ok([
        tape.haar_band(x, Band::LL)?,
        tape.haar_band(x, Band::LH)?,
        tape.haar_band(x, Band::HL)?,
        tape.haar_band(x, Band::HH)?,
    ])
}

/// Differentiable `idwt(dwt(x) ⊙ masks)`.
pub fn wt_aug_on_tape<T: Scalar>(tape: &mut Tape<T>, x: Var, masks: &MaskSet<T>) -> Result<Var> {
    let (_, _, h, w) = tape.value(x).dims4()?;
    let bands = dwt_on_tape(tape, x)?;
    let mut masked = bands;
    for (slot, b) in masked.iter_mut().zip(Band::ALL) {
        let m = tape.constant(masks.band(b).detached());
        *slot = tape.mul(*slot, m)?;
    }
    tape.haar_synthesis(masked, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block() -> Tensor<f64> {
        Tensor::from_f64(&[1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap()
    }

    #[test]
    fn constant_block() {
        let s = haar_dwt2(&Tensor::<f64>::ones(&[1, 1, 2, 2]).unwrap()).unwrap();
        assert_eq!(s.ll.data(), &[2.0]);
        assert_eq!((s.lh.data(), s.hl.data(), s.hh.data()), (&[0.0][..], &[0.0][..], &[0.0][..]));
    }

    #[test]
    fn direct_block_and_inverse() {
        let s = haar_dwt2(&block()).unwrap();
        assert_eq!([s.ll.data()[0], s.lh.data()[0], s.hl.data()[0], s.hh.data()[0]], [5., -1., -2., 0.]);
        assert_eq!(haar_idwt2(&s).unwrap(), block());
    }

    #[test]
    fn zero_bands_give_zero() {
        let z = Tensor::<f64>::zeros(&[1, 2, 3, 3]).unwrap();
        let s = SubbandSet { ll: z.clone(), lh: z.clone(), hl: z.clone(), hh: z, source_hw: (5, 6) };
        let out = haar_idwt2(&s).unwrap();
        assert_eq!(out.shape(), &[1, 2, 5, 6]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rank_and_extent_contracts() {
        let r3 = Tensor::<f64>::zeros(&[1, 2, 2]).unwrap();
        assert!(haar_dwt2(&r3).is_err());
        let thin = Tensor::<f64>::zeros(&[1, 1, 1, 4]).unwrap();
        assert!(haar_dwt2(&thin).is_err());
        let mut s = haar_dwt2(&Tensor::<f64>::zeros(&[1, 1, 4, 4]).unwrap()).unwrap();
        s.hh = Tensor::zeros(&[1, 1, 1, 2]).unwrap();
        assert!(haar_idwt2(&s).is_err());
    }

    #[test]
    fn keep_ll_only_gives_block_means() {
        let masks = MaskSet::keep_only(&[1, 1, 1, 1], [true, false, false, false]).unwrap();
        let out = wt_aug_with_masks(&block(), &masks).unwrap();
        assert_eq!(out.data(), &[2.5; 4]);
    }

    #[test]
    fn mask_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ones: MaskSet<f32> = make_masks([2, 3, 4, 4], &WtAugConfig::uniform(1.0), &mut rng).unwrap();
        assert!(ones.is_all_ones());
        assert_eq!(ones.masks[0].shape(), &[1, 1, 4, 4]);
        let zeros: MaskSet<f32> = make_masks([2, 3, 4, 4], &WtAugConfig::uniform(0.0), &mut rng).unwrap();
        assert!(zeros.masks.iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
        let cfg = WtAugConfig { channel_shared: false, ..Default::default() };
        let per: MaskSet<f32> = make_masks([2, 3, 4, 4], &cfg, &mut rng).unwrap();
        assert_eq!(per.masks[3].shape(), &[2, 3, 4, 4]);
        assert!(make_masks::<f32, _>([1, 1, 2, 2], &WtAugConfig::uniform(1.5), &mut rng).is_err());
    }

    #[test]
    fn half_keep_fraction_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m: MaskSet<f64> = make_masks([1, 1, 32, 32], &WtAugConfig::uniform(0.5), &mut rng).unwrap();
        for mask in &m.masks {
            let frac = mask.sum_all() / 1024.0;
            assert!((0.40..=0.60).contains(&frac), "{frac}");
        }
    }

    #[test]
    fn masks_replay_from_seed() {
        let cfg = WtAugConfig { seed: 42, ..Default::default() };
        let a: MaskSet<f32> = make_masks([1, 1, 8, 8], &cfg, &mut cfg.rng()).unwrap();
        let b: MaskSet<f32> = make_masks([1, 1, 8, 8], &cfg, &mut cfg.rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_zero_masks_zero_the_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Tensor::<f64>::randn(&[1, 2, 5, 7], 1.0, &mut rng).unwrap();
        let out = wt_aug(&f, &WtAugConfig::uniform(0.0), &mut rng).unwrap();
        assert_eq!(out.shape(), f.shape());
        assert!(out.data().iter().all(|&v| v == 0.0));
    }
}
