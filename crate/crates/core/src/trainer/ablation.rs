//! Train and evaluate every (arm, seed) pair, summarize per arm, and compare
//! arms pairwise with the Wilcoxon signed-rank test over per-sample Dice.
//! Samples are paired across arms by (seed, test sample).

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{evaluate, train, AugArm, TrainConfig};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::{wilcoxon_signed_rank, WilcoxonResult};
use crate::model::NetworkConfig;
use crate::scalar::Scalar;

/// An augmentation arm plus the fusion toggle. Parsed from `<arm>` or
/// `<arm>/nocg`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub name: String,
    pub aug: AugArm,
    pub cg_fuse: bool,
}

impl ArmSpec {
    pub fn new(aug: AugArm, cg_fuse: bool) -> Self {
        let name = if cg_fuse { aug.name().to_string() } else { format!("{}/nocg", aug.name()) };
        ArmSpec { name, aug, cg_fuse }
    }
}

impl FromStr for ArmSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (aug, cg) = match s.strip_suffix("/nocg") {
            Some(a) => (a, false),
            None => (s, true),
        };
        Ok(ArmSpec::new(aug.parse()?, cg))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub mean_dice: f64,
    pub mean_hd95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: String,
    pub mean_dice: f64,
    pub sd_dice: f64,
    pub mean_hd95: f64,
    pub sd_hd95: f64,
    pub seeds: Vec<SeedResult>,
    /// Per-sample mean foreground Dice, seed-major.
    pub per_sample_dice: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub result: WilcoxonResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub arms: Vec<ArmResult>,
    pub tests: Vec<PairTest>,
}

pub const MIN_ARMS: usize = 2;
pub const MIN_SEEDS: usize = 3;

pub const ABLATION_CSV_HEADER: &str = "arm,mean_dice,sd_dice,mean_hd95,sd_hd95,seeds";

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{ABLATION_CSV_HEADER}\n");
        for a in &self.arms {
            writeln!(s, "{},{},{},{},{},{}", a.arm, a.mean_dice, a.sd_dice, a.mean_hd95, a.sd_hd95, a.seeds.len()).unwrap();
        }
        s
    }

    pub fn wilcoxon_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.tests)?)
    }

    pub fn arm(&self, name: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.arm == name)
    }
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Runs every arm for every seed in `cfg.seeds`. `progress` sees each
/// finished `(arm, seed)` job.
pub fn ablation_run<T: Scalar>(
    arms: &[ArmSpec],
    cfg: &TrainConfig,
    net: &NetworkConfig,
    train_set: &[Sample],
    test_set: &[Sample],
    mut progress: impl FnMut(&ArmSpec, &SeedResult),
) -> Result<AblationReport> {
    if arms.len() < MIN_ARMS || cfg.seeds.len() < MIN_SEEDS {
        return Err(Error::Input(format!(
            "ablation needs at least {MIN_ARMS} arms and {MIN_SEEDS} seeds, got {} and {}",
            arms.len(),
            cfg.seeds.len()
        )));
    }
    let mut results = Vec::with_capacity(arms.len());
    for arm in arms {
        let net_cfg = NetworkConfig { cg_fuse: arm.cg_fuse, ..net.clone() };
        let mut seeds = Vec::new();
        let mut per_sample = Vec::new();
        for &seed in &cfg.seeds {
            let run = TrainConfig { seed, arm: arm.aug, ..cfg.clone() };
            let out = train::<T>(&run, &net_cfg, train_set)?;
            let report = evaluate(&out.checkpoint.network, test_set, 1.0)?;
            let r = SeedResult { seed, mean_dice: report.mean_dice, mean_hd95: report.mean_hd95 };
            progress(arm, &r);
            per_sample.extend(report.per_sample_dice());
            seeds.push(r);
        }
        let (mean_dice, sd_dice) = mean_sd(&seeds.iter().map(|s| s.mean_dice).collect::<Vec<_>>());
        let (mean_hd95, sd_hd95) = mean_sd(&seeds.iter().map(|s| s.mean_hd95).collect::<Vec<_>>());
        results.push(ArmResult { arm: arm.name.clone(), mean_dice, sd_dice, mean_hd95, sd_hd95, seeds, per_sample_dice: per_sample });
    }
    let mut tests = Vec::new();
    for i in 0..results.len() {
        for j in i + 1..results.len() {
            let (a, b) = (&results[i], &results[j]);
            let d: Vec<f64> = a.per_sample_dice.iter().zip(&b.per_sample_dice).map(|(x, y)| x - y).collect();
            tests.push(PairTest { a: a.arm.clone(), b: b.arm.clone(), result: wilcoxon_signed_rank(&d)? });
        }
    }
    Ok(AblationReport { arms: results, tests })
}
