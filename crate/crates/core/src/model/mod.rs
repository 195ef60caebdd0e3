//! Frozen encoder → feature augmentation on skips → fusion-guided decoder
//! with concatenate-convolve-upsample (CCU) blocks → segmentation head.
//!
//! Decoder levels run 3, 2, 1. The deepest stage map, bilinearly resized to
//! stage 3, is the initial decoder state. At level `l` the state is resized to
//! stage `l` if needed, fused with the (augmented) stage-`l` map, and passed
//! through a CCU block together with the stage-`l` skip, doubling resolution.

mod checkpoint;
mod encoder;
mod params;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{feature_spatial_aug, CorruptionPolicy};
use crate::error::{contract_err, Result};
use crate::fusion::{cg_fuse_on_tape, FusionDims, FusionParams, FusionVars, FusionWeights};
use crate::metrics::LabelMask;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::wavelet::{wt_aug, WtAugConfig};

pub use checkpoint::{Checkpoint, CheckpointManifest, ParamEntry, CHECKPOINT_FORMAT};
pub use encoder::{Encoder, EncoderKind, EncoderSpec, STAGES};
pub use params::{BoundParams, ParamStore};

/// Which stage map enters each CCU block next to the fused decoder state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipSource {
    Raw,
    Augmented,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub encoder: EncoderSpec,
    pub input_hw: (usize, usize),
    pub num_classes: usize,
    /// Output widths of the CCU blocks at levels 3, 2, 1.
    pub decoder_widths: [usize; 3],
    pub head_width: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub positional_encoding: bool,
    /// Per-stage wavelet augmentation, stage 1 first.
    pub wt_aug: [WtAugConfig; STAGES],
    /// Without fusion the decoder state goes straight into the CCU block and
    /// the augmented stage map takes the skip slot.
    pub cg_fuse: bool,
    pub ccu_skip: SkipSource,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let encoder = EncoderSpec::default();
        let c = encoder.channels;
        NetworkConfig {
            encoder,
            input_hw: (64, 64),
            num_classes: 3,
            decoder_widths: [c[2], c[1], c[0]],
            head_width: c[0],
            heads: 4,
            ff_mult: 4,
            positional_encoding: false,
            wt_aug: Default::default(),
            cg_fuse: true,
            ccu_skip: SkipSource::Raw,
        }
    }
}

/// Decoder level `l` in `1..=3` reads encoder stage index `l - 1`.
pub const LEVELS: [usize; 3] = [3, 2, 1];

impl NetworkConfig {
    /// Channels of the decoder state entering level `l`.
    pub fn level_input_channels(&self, l: usize) -> usize {
        match l {
            3 => self.encoder.channels[3],
            _ => self.decoder_widths[2 - l],
        }
    }

    pub fn level_width(&self, l: usize) -> usize {
        self.decoder_widths[3 - l]
    }

    pub fn fusion_dims(&self, l: usize) -> FusionDims {
        let c_dec = self.level_input_channels(l);
        FusionDims {
            c_dec,
            c_enc: self.encoder.channels[l - 1],
            model_dim: c_dec,
            heads: self.heads,
            ff_mult: self.ff_mult,
            positional_encoding: self.positional_encoding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(contract_err!("num_classes must be in 2..=256, got {}", self.num_classes));
        }
        let deepest = self.encoder.strides[STAGES - 1];
        let (h, w) = self.input_hw;
        if h == 0 || w == 0 || h % deepest != 0 || w % deepest != 0 {
            return Err(contract_err!("input {h}x{w} not divisible by the deepest stride {deepest}"));
        }
        if self.decoder_widths.contains(&0) || self.head_width == 0 {
            return Err(contract_err!("decoder widths must be positive"));
        }
        if self.cg_fuse {
            for l in LEVELS {
                self.fusion_dims(l).validate()?;
            }
        }
        self.wt_aug.iter().try_for_each(WtAugConfig::validate)
    }

    pub fn with_uniform_keep_prob(mut self, p: f64) -> Self {
        self.wt_aug.iter_mut().for_each(|c| c.keep_prob = [p; 4]);
        self
    }
}

/// Feature-level augmentation applied in training mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FeatureAug {
    None,
    /// Intensity corruptions applied directly to the stage maps.
    Spatial(CorruptionPolicy),
    /// Wavelet sub-band masking with the per-stage configs.
    Wavelet,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    Eval,
    Train(FeatureAug),
}

#[derive(Clone, Copy, Debug)]
pub struct CcuVars {
    pub conv_w: Var,
    pub conv_b: Var,
    pub up_w: Var,
    pub up_b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub conv_w: Var,
    pub conv_b: Var,
    pub out_w: Var,
    pub out_b: Var,
}

/// Concatenate, 3×3 convolution + GELU, stride-2 transposed convolution.
pub fn ccu_on_tape<T: Scalar>(tape: &mut Tape<T>, fused: Var, skip: Var, w: &CcuVars) -> Result<Var> {
    let (nf, _, hf, wf) = tape.value(fused).dims4()?;
    let (ns, _, hs, ws) = tape.value(skip).dims4()?;
    if (nf, hf, wf) != (ns, hs, ws) {
        return Err(contract_err!("ccu inputs differ: {:?} vs {:?}", tape.shape(fused), tape.shape(skip)));
    }
    let cat = tape.concat(&[fused, skip], 1)?;
    let h = tape.conv2d(cat, w.conv_w, Some(w.conv_b), 1, 1)?;
    let h = tape.gelu(h)?;
    tape.conv_transpose2d(h, w.up_w, Some(w.up_b), 2, 0)
}

/// 3×3 convolution + GELU, 1×1 convolution to class scores, bilinear resize.
pub fn seg_head_on_tape<T: Scalar>(tape: &mut Tape<T>, feat: Var, w: &HeadVars, out_hw: (usize, usize)) -> Result<Var> {
    let (_, _, h, wd) = tape.value(feat).dims4()?;
    if out_hw.0 < h || out_hw.1 < wd {
        return Err(contract_err!("head target {out_hw:?} smaller than features {h}x{wd}"));
    }
    let x = tape.conv2d(feat, w.conv_w, Some(w.conv_b), 1, 1)?;
    let x = tape.gelu(x)?;
    let x = tape.conv2d(x, w.out_w, Some(w.out_b), 1, 0)?;
    if (h, wd) == out_hw {
        Ok(x)
    } else {
        tape.resize_bilinear(x, out_hw.0, out_hw.1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Scalar> {
    pub config: NetworkConfig,
    pub encoder: Encoder<T>,
    pub params: ParamStore<T>,
}

fn fusion_prefix(l: usize) -> String {
    format!("level{l}.fuse")
}

impl<T: Scalar> Network<T> {
    /// Fresh decoder, fusion and head weights drawn from `init_seed`.
    pub fn new(config: NetworkConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(&config.encoder)?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut params = ParamStore::new();
        let he = |fan: usize| (2.0 / fan as f64).sqrt();
        for l in LEVELS {
            let (cin, cskip, d) = (config.level_input_channels(l), config.encoder.channels[l - 1], config.level_width(l));
            if config.cg_fuse {
                let fp = FusionParams::<T>::init(config.fusion_dims(l), &mut rng)?;
                for (name, t) in fp.weights.iter() {
                    params.insert(format!("{}.{name}", fusion_prefix(l)), t.clone())?;
                }
            }
            let p = format!("level{l}.ccu");
            params.insert(format!("{p}.conv_w"), Tensor::randn(&[d, cin + cskip, 3, 3], he((cin + cskip) * 9), &mut rng)?)?;
            params.insert(format!("{p}.conv_b"), Tensor::zeros(&[d])?)?;
            params.insert(format!("{p}.up_w"), Tensor::randn(&[d, d, 2, 2], (1.0 / d as f64).sqrt(), &mut rng)?)?;
            params.insert(format!("{p}.up_b"), Tensor::zeros(&[d])?)?;
        }
        let (d1, hw, k) = (config.level_width(1), config.head_width, config.num_classes);
        params.insert("head.conv_w", Tensor::randn(&[hw, d1, 3, 3], he(d1 * 9), &mut rng)?)?;
        params.insert("head.conv_b", Tensor::zeros(&[hw])?)?;
        params.insert("head.out_w", Tensor::randn(&[k, hw, 1, 1], (1.0 / hw as f64).sqrt(), &mut rng)?)?;
        params.insert("head.out_b", Tensor::zeros(&[k])?)?;
        Ok(Network { config, encoder, params })
    }

    /// Stage maps of `images`; see [`Encoder::encode`].
    pub fn encode(&self, images: &Tensor<T>, ids: &[&str]) -> Result<[Tensor<T>; STAGES]> {
        let (_, _, h, w) = images.dims4()?;
        if (h, w) != self.config.input_hw {
            return Err(contract_err!("input {h}x{w} does not match the configured {:?}", self.config.input_hw));
        }
        self.encoder.encode(images, ids)
    }

    /// Stage maps after training-mode feature augmentation. Eval mode and
    /// identity configurations return the maps unchanged.
    pub fn augment<R: Rng + ?Sized>(&self, feats: &[Tensor<T>; STAGES], mode: Mode, rng: &mut R) -> Result<[Tensor<T>; STAGES]> {
        let mut out = feats.clone();
        match mode {
            Mode::Eval | Mode::Train(FeatureAug::None) => {}
            Mode::Train(FeatureAug::Wavelet) => {
                for (f, cfg) in out.iter_mut().zip(&self.config.wt_aug) {
                    // A single row or column has no 2×2 blocks to transform.
                    let tiny = f.shape()[2] < 2 || f.shape()[3] < 2;
                    if !cfg.is_identity() && !tiny {
                        *f = wt_aug(f, cfg, rng)?;
                    }
                }
            }
            Mode::Train(FeatureAug::Spatial(policy)) => {
                for f in out.iter_mut() {
                    *f = feature_spatial_aug(f, &policy.sample(rng))?;
                }
            }
        }
        Ok(out)
    }

    fn fusion_vars(bound: &BoundParams, l: usize) -> Result<FusionVars> {
        let p = fusion_prefix(l);
        let g = |n: &str| bound.var(&format!("{p}.{n}"));
        let names = FusionWeights::<()>::NAMES;
        Ok(FusionWeights {
            w_q: g(names[0])?,
            w_k: g(names[1])?,
            w_v: g(names[2])?,
            w_o: g(names[3])?,
            ff_w1: g(names[4])?,
            ff_b1: g(names[5])?,
            ff_w2: g(names[6])?,
            ff_b2: g(names[7])?,
        })
    }

    fn ccu_vars(bound: &BoundParams, l: usize) -> Result<CcuVars> {
        let g = |n: &str| bound.var(&format!("level{l}.ccu.{n}"));
        Ok(CcuVars { conv_w: g("conv_w")?, conv_b: g("conv_b")?, up_w: g("up_w")?, up_b: g("up_b")? })
    }

    fn head_vars(bound: &BoundParams) -> Result<HeadVars> {
        let g = |n: &str| bound.var(&format!("head.{n}"));
        Ok(HeadVars { conv_w: g("conv_w")?, conv_b: g("conv_b")?, out_w: g("out_w")?, out_b: g("out_b")? })
    }

    /// Record the decoder on `tape` and return logits `[N, K, H, W]`.
    /// `raw` are the encoder maps, `aug` their augmented versions.
    pub fn decode_on_tape(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        raw: &[Tensor<T>; STAGES],
        aug: &[Tensor<T>; STAGES],
    ) -> Result<Var> {
        let cfg = &self.config;
        let deepest = tape.constant(aug[STAGES - 1].detached());
        let mut dec = deepest;
        for l in LEVELS {
            let s = l - 1;
            let (_, _, h, w) = aug[s].dims4()?;
            if tape.value(dec).shape()[2..] != [h, w] {
                dec = tape.resize_bilinear(dec, h, w)?;
            }
            let enc = tape.constant(aug[s].detached());
            let (fused, skip) = if cfg.cg_fuse {
                let fv = Self::fusion_vars(bound, l)?;
                let fused = cg_fuse_on_tape(tape, dec, enc, &fv, &cfg.fusion_dims(l))?;
                let skip = match cfg.ccu_skip {
                    SkipSource::Raw => tape.constant(raw[s].detached()),
                    SkipSource::Augmented => enc,
                };
                (fused, skip)
            } else {
                (dec, enc)
            };
            dec = ccu_on_tape(tape, fused, skip, &Self::ccu_vars(bound, l)?)?;
        }
        seg_head_on_tape(tape, dec, &Self::head_vars(bound)?, cfg.input_hw)
    }

    /// Full pass from precomputed stage maps.
    pub fn forward_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        feats: &[Tensor<T>; STAGES],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let aug = self.augment(feats, mode, rng)?;
        self.decode_on_tape(tape, bound, feats, &aug)
    }

    /// Eval-mode logits for `images`.
    pub fn forward_eval(&self, images: &Tensor<T>, ids: &[&str]) -> Result<Tensor<T>> {
        let feats = self.encode(images, ids)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let logits = self.decode_on_tape(&mut tape, &bound, &feats, &feats)?;
        Ok(tape.value(logits).detached())
    }

    pub fn predict(&self, images: &Tensor<T>, ids: &[&str]) -> Result<LabelMask> {
        LabelMask::argmax(&self.forward_eval(images, ids)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig { input_hw: (32, 32), ..Default::default() }
    }

    #[test]
    fn logits_shape_and_determinism() {
        let net = Network::<f32>::new(small(), 3).unwrap();
        let x = Tensor::from_fn(&[2, 1, 32, 32], |i| ((i * 31) % 17) as f32 / 17.0).unwrap();
        let a = net.forward_eval(&x, &["a", "b"]).unwrap();
        assert_eq!(a.shape(), &[2, 3, 32, 32]);
        assert!(a.all_finite());
        assert_eq!(net.forward_eval(&x, &["a", "b"]).unwrap(), a);
    }

    #[test]
    fn parameter_names_are_stable() {
        let net = Network::<f32>::new(small(), 0).unwrap();
        assert_eq!(net.params.names()[0], "level3.fuse.w_q");
        assert_eq!(net.params.names().last().unwrap(), "head.out_b");
        let plain = Network::<f32>::new(NetworkConfig { cg_fuse: false, ..small() }, 0).unwrap();
        assert!(plain.params.names().iter().all(|n| !n.contains("fuse")));
    }
}
