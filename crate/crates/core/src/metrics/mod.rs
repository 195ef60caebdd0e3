//! Training objective and evaluation metrics.

mod hd95;
mod loss;
mod overlap;
mod wilcoxon;

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};
use crate::io::ByteTensor;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use hd95::{boundary, hd95, hd95_plane};
pub use loss::{ce_loss, combined_loss, dice_loss, LossParts, DICE_EPS};
pub use overlap::{dice_score, mean_foreground_dice};
pub use wilcoxon::{wilcoxon_signed_rank, TestMethod, WilcoxonResult, EXACT_MAX_N};

/// Per-pixel class indices `[N, H, W]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    values: ByteTensor,
    num_classes: usize,
}

impl LabelMask {
    pub fn new(shape: [usize; 3], data: Vec<u8>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 || num_classes > 256 {
            return Err(contract_err!("num_classes must be in 2..=256, got {num_classes}"));
        }
        if let Some(&bad) = data.iter().find(|&&v| v as usize >= num_classes) {
            return Err(contract_err!("class index {bad} >= num_classes {num_classes}"));
        }
        Ok(LabelMask { values: ByteTensor::new(&shape, data)?, num_classes })
    }

    pub fn from_bytes(values: ByteTensor, num_classes: usize) -> Result<Self> {
        let &[n, h, w] = &values.shape[..] else {
            return Err(contract_err!("label mask must be [N, H, W], got {:?}", values.shape));
        };
        Self::new([n, h, w], values.data, num_classes)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.values.shape[0], self.values.shape[1], self.values.shape[2])
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[u8] {
        &self.values.data
    }

    pub fn bytes(&self) -> &ByteTensor {
        &self.values
    }

    /// The `i`-th item as a `[1, H, W]` mask.
    pub fn item(&self, i: usize) -> LabelMask {
        let (_, h, w) = self.dims();
        LabelMask {
            values: ByteTensor { shape: vec![1, h, w], data: self.values.data[i * h * w..(i + 1) * h * w].to_vec() },
            num_classes: self.num_classes,
        }
    }

    /// Concatenate `[1, H, W]` masks along the batch axis.
    pub fn stack(items: &[&LabelMask]) -> Result<LabelMask> {
        let first = items.first().ok_or_else(|| contract_err!("stack of no masks"))?;
        let (_, h, w) = first.dims();
        let mut data = Vec::new();
        let mut n = 0;
        for m in items {
            let (mn, mh, mw) = m.dims();
            if (mh, mw) != (h, w) || m.num_classes != first.num_classes {
                return Err(contract_err!("cannot stack masks of differing geometry"));
            }
            data.extend_from_slice(m.data());
            n += mn;
        }
        LabelMask::new([n, h, w], data, first.num_classes)
    }

    /// `[N, K, H, W]` indicator tensor.
    pub fn one_hot<T: Scalar>(&self) -> Tensor<T> {
        let (n, h, w) = self.dims();
        let k = self.num_classes;
        let mut out = vec![T::zero(); n * k * h * w];
        for b in 0..n {
            for p in 0..h * w {
                let cls = self.values.data[b * h * w + p] as usize;
                out[(b * k + cls) * h * w + p] = T::one();
            }
        }
        Tensor::new(&[n, k, h, w], out).expect("consistent shape")
    }

    /// Argmax over the class axis of `[N, K, H, W]` scores; ties pick the lowest class.
    pub fn argmax<T: Scalar>(scores: &Tensor<T>) -> Result<LabelMask> {
        let (n, k, h, w) = scores.dims4()?;
        let d = scores.data();
        let mut out = Vec::with_capacity(n * h * w);
        for b in 0..n {
            for p in 0..h * w {
                let mut best = 0;
                for c in 1..k {
                    if d[(b * k + c) * h * w + p] > d[(b * k + best) * h * w + p] {
                        best = c;
                    }
                }
                out.push(best as u8);
            }
        }
        LabelMask::new([n, h, w], out, k)
    }
}

/// Metrics of one evaluated sample. Vectors are indexed by foreground class
/// minus one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub sample_id: String,
    pub dice: Vec<f64>,
    pub hd95: Vec<f64>,
    pub mean_dice: f64,
    pub mean_hd95: f64,
}

impl MetricsRecord {
    pub fn compute(sample_id: &str, pred: &LabelMask, gt: &LabelMask, spacing: f64) -> Result<Self> {
        if pred.dims() != gt.dims() || pred.num_classes() != gt.num_classes() {
            return Err(contract_err!("prediction and ground truth differ in shape"));
        }
        let k = gt.num_classes();
        let dice: Vec<f64> = (1..k).map(|c| dice_score(pred, gt, c)).collect();
        let hd: Vec<f64> = (1..k).map(|c| hd95(pred, gt, c, spacing)).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(MetricsRecord {
            sample_id: sample_id.to_string(),
            mean_dice: mean(&dice),
            mean_hd95: mean(&hd),
            dice,
            hd95: hd,
        })
    }

    /// `sample_id,class,dice,hd95` rows, one per foreground class.
    pub fn csv_rows(&self) -> Vec<String> {
        self.dice
            .iter()
            .zip(&self.hd95)
            .enumerate()
            .map(|(i, (d, h))| format!("{},{},{},{}", self.sample_id, i + 1, d, h))
            .collect()
    }
}

pub const METRICS_CSV_HEADER: &str = "sample_id,class,dice,hd95";
