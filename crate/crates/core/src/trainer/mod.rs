//! Few-shot training loop, evaluation and the ablation harness.
//!
//! Randomness is split into independent ChaCha streams of the run seed:
//! few-shot subset selection, decoder initialization, shuffling and
//! augmentation. Changing the augmentation arm therefore leaves the subset,
//! the initial weights and the batch order untouched.

mod ablation;
mod adam;

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{corrupt, CorruptionPolicy, Sample};
use crate::error::{contract_err, Error, Result};
use crate::metrics::{combined_loss, mean_foreground_dice, LabelMask, MetricsRecord, METRICS_CSV_HEADER};
use crate::model::{Checkpoint, FeatureAug, Mode, Network, NetworkConfig, STAGES};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use ablation::{ablation_run, AblationReport, ArmResult, ArmSpec, PairTest, SeedResult, MIN_ARMS, MIN_SEEDS};
pub use adam::{adam_step, AdamConfig, AdamState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugArm {
    None,
    ImageLevel,
    FeatureSpatial,
    FeatureWavelet,
}

impl AugArm {
    pub const ALL: [AugArm; 4] = [AugArm::None, AugArm::ImageLevel, AugArm::FeatureSpatial, AugArm::FeatureWavelet];

    pub fn name(self) -> &'static str {
        match self {
            AugArm::None => "none",
            AugArm::ImageLevel => "image_level",
            AugArm::FeatureSpatial => "feature_spatial",
            AugArm::FeatureWavelet => "feature_wavelet",
        }
    }
}

impl FromStr for AugArm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugArm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown augmentation arm {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub few_shot: usize,
    pub seed: u64,
    pub arm: AugArm,
    /// Corruption ranges for the `image_level` and `feature_spatial` arms.
    pub corruption: CorruptionPolicy,
    /// Seeds of the ablation harness.
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 2,
            epochs: 300,
            few_shot: 2,
            seed: 0,
            arm: AugArm::None,
            corruption: CorruptionPolicy::default(),
            seeds: vec![0, 1, 2],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 || self.few_shot == 0 {
            return Err(contract_err!("batch size and few-shot count must be positive"));
        }
        if self.few_shot > dataset_len {
            return Err(Error::Input(format!("few-shot count {} exceeds the {dataset_len} training samples", self.few_shot)));
        }
        Ok(())
    }
}

/// Independent random stream `k` of `seed`.
pub fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r
}

const STREAM_SUBSET: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_AUG: u64 = 4;

/// First `k` entries of a seeded shuffle of `0..n`.
pub fn few_shot_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, STREAM_SUBSET));
    idx.truncate(k);
    idx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    pub dice_loss: f64,
    /// Mean foreground Dice of the training-mode predictions of the epoch.
    pub train_dice: f64,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,loss,ce,dice_loss,train_dice";

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{TRAIN_LOG_HEADER}\n");
    for e in log {
        writeln!(s, "{},{},{},{},{}", e.epoch, e.loss, e.ce, e.dice_loss, e.train_dice).unwrap();
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar> {
    pub checkpoint: Checkpoint<T>,
    pub log: Vec<EpochLog>,
    pub encoder_checksum_before: String,
    pub encoder_checksum_after: String,
}

/// `[1, H, W]` float32 image as a `[1, 1, H, W]` tensor of `T`.
pub fn image_batch<T: Scalar>(images: &[&Tensor<f32>]) -> Result<Tensor<T>> {
    let parts: Vec<Tensor<T>> = images
        .iter()
        .map(|im| {
            let s = im.shape();
            im.cast::<T>().reshape(&[1, 1, s[s.len() - 2], s[s.len() - 1]])
        })
        .collect::<Result<_>>()?;
    Tensor::concat0(&parts.iter().collect::<Vec<_>>())
}

fn stack_features<T: Scalar>(cache: &[[Tensor<T>; STAGES]], pick: &[usize]) -> Result<[Tensor<T>; STAGES]> {
    let mut out = Vec::with_capacity(STAGES);
    for s in 0..STAGES {
        let parts: Vec<&Tensor<T>> = pick.iter().map(|&i| &cache[i][s]).collect();
        out.push(Tensor::concat0(&parts)?);
    }
    Ok(out.try_into().expect("four stages"))
}

/// Train decoder, fusion and head weights on a few-shot subset of `samples`.
pub fn train<T: Scalar>(cfg: &TrainConfig, net_cfg: &NetworkConfig, samples: &[Sample]) -> Result<TrainOutcome<T>> {
    cfg.validate(samples.len())?;
    let subset = few_shot_indices(samples.len(), cfg.few_shot, cfg.seed);
    let shots: Vec<&Sample> = subset.iter().map(|&i| &samples[i]).collect();
    let mut net = Network::<T>::new(net_cfg.clone(), stream(cfg.seed, STREAM_INIT).random())?;
    let checksum_before = net.encoder.checksum();
    let mut adam = AdamState::new(&net.params);
    let mut shuffle_rng = stream(cfg.seed, STREAM_SHUFFLE);
    let mut aug_rng = stream(cfg.seed, STREAM_AUG);

    let feature_cache: Vec<[Tensor<T>; STAGES]> = if cfg.arm == AugArm::ImageLevel {
        Vec::new()
    } else {
        shots
            .iter()
            .map(|s| net.encode(&image_batch(&[&s.image])?, &[&s.id]))
            .collect::<Result<_>>()?
    };
    let mode = Mode::Train(match cfg.arm {
        AugArm::None | AugArm::ImageLevel => FeatureAug::None,
        AugArm::FeatureSpatial => FeatureAug::Spatial(cfg.corruption),
        AugArm::FeatureWavelet => FeatureAug::Wavelet,
    });

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..shots.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut ce_sum, mut dl_sum, mut dice_sum) = (0.0, 0.0, 0.0, 0.0);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let masks: Vec<&LabelMask> = batch.iter().map(|&i| &shots[i].mask).collect();
            let target = LabelMask::stack(&masks)?;
            let feats = if cfg.arm == AugArm::ImageLevel {
                let imgs: Vec<Tensor<f32>> = batch
                    .iter()
                    .map(|&i| corrupt(&shots[i].image, &cfg.corruption.sample(&mut aug_rng)))
                    .collect::<Result<_>>()?;
                let ids: Vec<&str> = batch.iter().map(|&i| shots[i].id.as_str()).collect();
                net.encode(&image_batch(&imgs.iter().collect::<Vec<_>>())?, &ids)?
            } else {
                stack_features(&feature_cache, batch)?
            };
            let mut tape = Tape::new();
            let bound = net.params.bind(&mut tape);
            let logits = net.forward_on_tape(&mut tape, &bound, &feats, mode, &mut aug_rng)?;
            let parts = combined_loss(&mut tape, logits, &target)?;
            let loss = tape.value(parts.total).item()?.to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, value: loss });
            }
            tape.backward(parts.total)?;
            let grads: Vec<Option<&[T]>> = bound.vars.iter().map(|&v| tape.grad(v)).collect();
            adam_step(net.params.tensors_mut(), &grads, &mut adam, &cfg.adam)?;
            let w = batch.len() as f64;
            loss_sum += loss * w;
            ce_sum += tape.value(parts.ce).item()?.to_f64_lossy() * w;
            dl_sum += tape.value(parts.dice).item()?.to_f64_lossy() * w;
            let pred = LabelMask::argmax(tape.value(logits))?;
            dice_sum += (0..batch.len())
                .map(|b| mean_foreground_dice(&pred.item(b), &target.item(b)))
                .sum::<f64>();
        }
        let n = shots.len() as f64;
        log.push(EpochLog { epoch, loss: loss_sum / n, ce: ce_sum / n, dice_loss: dl_sum / n, train_dice: dice_sum / n });
    }

    let checksum_after = net.encoder.checksum();
    if checksum_after != checksum_before {
        return Err(contract_err!("frozen encoder changed during training"));
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            network: net,
            adam: Some(adam),
            train: Some(cfg.clone()),
            seed: cfg.seed,
            epoch: cfg.epochs,
            few_shot_ids: shots.iter().map(|s| s.id.clone()).collect(),
        },
        log,
        encoder_checksum_before: checksum_before,
        encoder_checksum_after: checksum_after,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<MetricsRecord>,
    /// Per foreground class, averaged over samples.
    pub class_dice: Vec<f64>,
    pub class_hd95: Vec<f64>,
    pub mean_dice: f64,
    pub mean_hd95: f64,
}

impl EvalReport {
    /// Per-sample rows followed by `mean` rows per class.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{METRICS_CSV_HEADER}\n");
        for r in &self.records {
            for row in r.csv_rows() {
                writeln!(s, "{row}").unwrap();
            }
        }
        for (i, (d, h)) in self.class_dice.iter().zip(&self.class_hd95).enumerate() {
            writeln!(s, "mean,{},{},{}", i + 1, d, h).unwrap();
        }
        s
    }

    pub fn per_sample_dice(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_dice).collect()
    }
}

const EVAL_CHUNK: usize = 8;

/// Eval-mode prediction, Dice and HD95 for every sample.
pub fn evaluate<T: Scalar>(net: &Network<T>, samples: &[Sample], spacing: f64) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Input("no samples to evaluate".into()));
    }
    let mut records = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let imgs: Vec<&Tensor<f32>> = chunk.iter().map(|s| &s.image).collect();
        let ids: Vec<&str> = chunk.iter().map(|s| s.id.as_str()).collect();
        let pred = net.predict(&image_batch(&imgs)?, &ids)?;
        for (i, s) in chunk.iter().enumerate() {
            records.push(MetricsRecord::compute(&s.id, &pred.item(i), &s.mask, spacing)?);
        }
    }
    let n = records.len() as f64;
    let k = records[0].dice.len();
    let class_dice: Vec<f64> = (0..k).map(|c| records.iter().map(|r| r.dice[c]).sum::<f64>() / n).collect();
    let class_hd95: Vec<f64> = (0..k).map(|c| records.iter().map(|r| r.hd95[c]).sum::<f64>() / n).collect();
    let mean_dice = records.iter().map(|r| r.mean_dice).sum::<f64>() / n;
    let mean_hd95 = records.iter().map(|r| r.mean_hd95).sum::<f64>() / n;
    Ok(EvalReport { records, class_dice, class_hd95, mean_dice, mean_hd95 })
}
