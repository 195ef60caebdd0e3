//! Frozen multi-scale feature sources.
//!
//! The toy encoder is a strided convolutional pyramid. Stage `k` maps the
//! previous stage (or the centered image) through a `r×r` stride-`r` patch
//! convolution, with `r = s_k / s_{k-1}`, followed by a residual 3×3 mixing
//! convolution. Weights come from a seeded initializer and are never trained:
//! encoding happens outside the tape.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{contract_err, Error, Result};
use crate::io::read_daug;
use crate::ops::activation::{apply, Unary};
use crate::ops::conv::{conv2d, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const STAGES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Toy,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub channels: [usize; STAGES],
    pub strides: [usize; STAGES],
    pub in_channels: usize,
    /// Initializer seed of the toy encoder.
    pub seed: u64,
    /// For `file`: path with `{id}` and `{stage}` (1-based) placeholders.
    pub path_template: Option<String>,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            kind: EncoderKind::Toy,
            channels: [16, 24, 32, 48],
            strides: [4, 8, 16, 32],
            in_channels: 1,
            seed: 0,
            path_template: None,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.strides.contains(&0) || self.in_channels == 0 {
            return Err(contract_err!("encoder channels and strides must be positive"));
        }
        if self.strides.windows(2).any(|p| p[1] < p[0]) {
            return Err(contract_err!("encoder strides must be nondecreasing, got {:?}", self.strides));
        }
        match self.kind {
            EncoderKind::Toy => {
                let mut prev = 1;
                for &s in &self.strides {
                    if s % prev != 0 {
                        return Err(contract_err!("toy encoder strides must divide each other, got {:?}", self.strides));
                    }
                    prev = s;
                }
            }
            EncoderKind::File => {
                if !self.path_template.as_deref().is_some_and(|t| t.contains("{stage}")) {
                    return Err(contract_err!("file encoder needs a path template containing {{stage}}"));
                }
            }
        }
        Ok(())
    }

    pub fn stage_shape(&self, stage: usize, n: usize, hw: (usize, usize)) -> [usize; 4] {
        let s = self.strides[stage];
        [n, self.channels[stage], hw.0 / s, hw.1 / s]
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ToyStage<T: Scalar> {
    patch: Tensor<T>,
    patch_stride: usize,
    mix: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T: Scalar> {
    spec: EncoderSpec,
    stages: Vec<ToyStage<T>>,
}

fn gelu_inplace<T: Scalar>(v: &mut [T]) {
    v.iter_mut().for_each(|x| *x = apply(Unary::Gelu, *x));
}

impl<T: Scalar> Encoder<T> {
    pub fn new(spec: &EncoderSpec) -> Result<Self> {
        spec.validate()?;
        let mut stages = Vec::new();
        if spec.kind == EncoderKind::Toy {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let (mut c_prev, mut s_prev) = (spec.in_channels, 1);
            for k in 0..STAGES {
                let (c, r) = (spec.channels[k], spec.strides[k] / s_prev);
                let he = |fan: usize| (2.0 / fan as f64).sqrt();
                let patch = Tensor::randn(&[c, c_prev, r, r], he(c_prev * r * r), &mut rng)?;
                let mix = Tensor::randn(&[c, c, 3, 3], he(c * 9), &mut rng)?;
                stages.push(ToyStage { patch, patch_stride: r, mix });
                (c_prev, s_prev) = (c, spec.strides[k]);
            }
        }
        Ok(Encoder { spec: spec.clone(), stages })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    /// Hex SHA-256 over every frozen weight (empty input for file encoders).
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for t in self.stages.iter().flat_map(|s| [&s.patch, &s.mix]) {
            buf.clear();
            t.data().iter().for_each(|v| v.write_le(&mut buf));
            h.update(&buf);
        }
        hex::encode(h.finalize())
    }

    /// Four stage maps for `images` `[N, C_in, H, W]`; `ids` name the samples
    /// for file-backed features.
    pub fn encode(&self, images: &Tensor<T>, ids: &[&str]) -> Result<[Tensor<T>; STAGES]> {
        let (n, c, h, w) = images.dims4()?;
        let deepest = self.spec.strides[STAGES - 1];
        if h % deepest != 0 || w % deepest != 0 {
            return Err(contract_err!("input {h}x{w} not divisible by the deepest stride {deepest}"));
        }
        match self.spec.kind {
            EncoderKind::Toy => {
                if c != self.spec.in_channels {
                    return Err(contract_err!("encoder expects {} input channels, got {c}", self.spec.in_channels));
                }
                self.encode_toy(images)
            }
            EncoderKind::File => {
                if ids.len() != n {
                    return Err(contract_err!("{} sample ids for a batch of {n}", ids.len()));
                }
                self.load_files(ids, (h, w))
            }
        }
    }

    fn encode_toy(&self, images: &Tensor<T>) -> Result<[Tensor<T>; STAGES]> {
        let half = T::from_f64_lossy(0.5);
        let mut x = images.map(|v| v - half);
        let mut out = Vec::with_capacity(STAGES);
        for st in &self.stages {
            let g = ConvGeom::conv(x.shape(), st.patch.shape(), st.patch_stride, 0)?;
            let mut p = conv2d(&g, x.data(), st.patch.data(), None);
            gelu_inplace(&mut p);
            let shape = g.out_shape();
            let gm = ConvGeom::conv(&shape, st.mix.shape(), 1, 1)?;
            let mut m = conv2d(&gm, &p, st.mix.data(), None);
            gelu_inplace(&mut m);
            p.iter_mut().zip(&m).for_each(|(a, &b)| *a += b);
            x = Tensor::new(&shape, p)?;
            out.push(x.clone());
        }
        Ok(out.try_into().expect("four stages"))
    }

    fn stage_path(&self, id: &str, stage: usize) -> PathBuf {
        let t = self.spec.path_template.as_deref().unwrap_or_default();
        PathBuf::from(t.replace("{id}", id).replace("{stage}", &(stage + 1).to_string()))
    }

    fn load_files(&self, ids: &[&str], hw: (usize, usize)) -> Result<[Tensor<T>; STAGES]> {
        let mut out = Vec::with_capacity(STAGES);
        for k in 0..STAGES {
            let want = self.spec.stage_shape(k, 1, hw);
            let mut parts = Vec::with_capacity(ids.len());
            for id in ids {
                let path = self.stage_path(id, k);
                let t = read_daug(&path)
                    .map_err(|e| Error::Input(format!("stage {} features for {id}: {e}", k + 1)))?
                    .to_float::<T>();
                if t.shape() != want {
                    return Err(Error::Input(format!(
                        "stage {} features {} have shape {:?}, expected {:?}",
                        k + 1,
                        path.display(),
                        t.shape(),
                        want
                    )));
                }
                parts.push(t);
            }
            out.push(Tensor::concat0(&parts.iter().collect::<Vec<_>>())?);
        }
        Ok(out.try_into().expect("four stages"))
    }
}
