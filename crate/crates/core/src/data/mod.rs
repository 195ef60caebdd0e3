//! Synthetic dataset, image corruptions and on-disk dataset layout.
//!
//! A dataset directory holds `manifest.json`, `images/<id>.pgm` and
//! `masks/<id>.pgm` (mask pixel value = class index).

mod corrupt;
pub mod pnm;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::LabelMask;
use crate::tensor::Tensor;

pub use corrupt::{
    corrupt, feature_spatial_aug, motion_kernel, Corruption, CorruptionKind, CorruptionPolicy, CorruptionSpec,
    MAX_BLUR_LENGTH,
};
pub use pnm::{read_pnm, write_pnm, PnmImage};
pub use synth::{gen_sample, generate_split, Sample, ShapeKind, ShapeParams, Split, SynthConfig};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    /// Paths relative to the manifest's directory.
    pub image: String,
    pub mask: String,
    #[serde(default)]
    pub shapes: Vec<ShapeParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub corruption: Option<CorruptionSpec>,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }
}

pub fn image_to_pnm(image: &Tensor<f32>) -> Result<PnmImage> {
    let (h, w) = match image.shape() {
        &[1, h, w] | &[h, w] => (h, w),
        s => return Err(Error::Input(format!("expected a [1, H, W] image, got {s:?}"))),
    };
    PnmImage::gray(w, h, image.data().iter().map(|&v| pnm::quantize(v as f64)).collect())
}

pub fn pnm_to_image(img: &PnmImage) -> Result<Tensor<f32>> {
    if img.channels != 1 {
        return Err(Error::Input("expected a grayscale image".into()));
    }
    let scale = img.maxval as f32;
    Tensor::new(&[1, img.height, img.width], img.data.iter().map(|&v| v as f32 / scale).collect())
}

/// Write samples under `dir` and return the manifest that was saved.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    samples: &[(Split, &Sample)],
    synth: Option<&SynthConfig>,
    corruption: Option<&CorruptionSpec>,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    let (_, first) = samples.first().ok_or_else(|| Error::Input("no samples to write".into()))?;
    let (_, h, w) = first.mask.dims();
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut entries = Vec::new();
    for &(split, s) in samples {
        let image = format!("images/{}.pgm", s.id);
        let mask = format!("masks/{}.pgm", s.id);
        write_pnm(dir.join(&image), &image_to_pnm(&s.image)?)?;
        let (_, mh, mw) = s.mask.dims();
        write_pnm(dir.join(&mask), &PnmImage::gray(mw, mh, s.mask.data().to_vec())?)?;
        entries.push(ManifestEntry { id: s.id.clone(), split, seed: s.seed, image, mask, shapes: s.shapes.clone() });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        num_classes: first.mask.num_classes(),
        height: h,
        width: w,
        synth: synth.cloned(),
        corruption: corruption.copied(),
        samples: entries,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Input(format!("{}: unsupported manifest version {}", path.display(), m.version)));
    }
    Ok(m)
}

/// Accept either a manifest file or the directory containing `manifest.json`.
pub fn manifest_path(p: impl AsRef<Path>) -> PathBuf {
    let p = p.as_ref();
    if p.is_dir() {
        p.join("manifest.json")
    } else {
        p.to_path_buf()
    }
}

pub fn load_entry(root: &Path, m: &Manifest, e: &ManifestEntry) -> Result<Sample> {
    let image = pnm_to_image(&read_pnm(root.join(&e.image))?)?;
    let mask_img = read_pnm(root.join(&e.mask))?;
    if (mask_img.height, mask_img.width) != (m.height, m.width) || image.shape()[1..] != [m.height, m.width] {
        return Err(Error::Input(format!("sample {} does not match the manifest geometry", e.id)));
    }
    let mask = LabelMask::new([1, m.height, m.width], mask_img.data, m.num_classes)
        .map_err(|err| Error::Input(format!("mask of {}: {err}", e.id)))?;
    Ok(Sample { id: e.id.clone(), image, mask, seed: e.seed, shapes: e.shapes.clone() })
}

/// Load every sample of `split` listed by the manifest at `path`.
pub fn load_split(path: impl AsRef<Path>, split: Split) -> Result<(Manifest, Vec<Sample>)> {
    let path = manifest_path(path);
    let m = read_manifest(&path)?;
    let root = path.parent().unwrap_or(Path::new("."));
    let samples = m.split(split).map(|e| load_entry(root, &m, e)).collect::<Result<_>>()?;
    Ok((m, samples))
}
