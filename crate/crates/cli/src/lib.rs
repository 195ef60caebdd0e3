//! `augseg` command dispatch. [`run`] returns the process exit code:
//! 0 on success, 1 for bad input (flags, files, formats), 2 for internal
//! invariant violations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use augseg::data::{
    self, corrupt, generate_split, load_split, read_pnm, write_dataset, write_pnm, CorruptionKind, CorruptionSpec, Sample, Split,
    SynthConfig,
};
use augseg::io::{read_daug, write_daug, AnyTensor, IntoAny};
use augseg::metrics::{wilcoxon_signed_rank, LabelMask, MetricsRecord, METRICS_CSV_HEADER};
use augseg::model::{Checkpoint, CheckpointManifest, NetworkConfig, SkipSource};
use augseg::trainer::{ablation_run, evaluate, log_csv, train, ArmSpec, AugArm, EvalReport, TrainConfig};
use augseg::wavelet::{band_shape, haar_dwt2, make_masks, wt_aug_with_masks, Band, WtAugConfig};
use augseg::{viz, Error, Scalar, Tensor};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "augseg", version, about = "Few-shot segmentation with wavelet feature augmentation and cross-attention fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset: PGM images and masks plus manifest.json.
    Synth(SynthArgs),
    /// Train decoder weights on a few-shot subset and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split (per-sample Dice and HD95 CSV).
    Eval(EvalArgs),
    /// Train and evaluate several arms over several seeds, with Wilcoxon tests.
    Ablate(AblateArgs),
    /// Single-level Haar analysis of a DAUG tensor into four sub-band files.
    Dwt(DwtArgs),
    /// Apply wavelet-domain random masking to a DAUG tensor.
    WtAug(WtAugArgs),
    /// Dice/HD95 between two PGM masks, or a Wilcoxon test on paired values.
    Metrics(MetricsArgs),
    /// PCA color visualization (PPM) of a DAUG feature map.
    Featviz(FeatvizArgs),
    /// Run the built-in invariant suite.
    Selftest,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of training samples.
    #[arg(long)]
    count: usize,
    /// Number of test samples.
    #[arg(long, default_value_t = 50)]
    test_count: usize,
    /// Base generation seed.
    #[arg(long, env = "AUGSEG_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// JSON synthetic-data config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Square image side.
    #[arg(long)]
    size: Option<usize>,
    /// Classes including background.
    #[arg(long)]
    classes: Option<usize>,
    /// Corrupt every written image with this family.
    #[arg(long, value_parser = parse_corruption_kind)]
    corrupt: Option<CorruptionKind>,
    /// Corruption strength: brightness factor, blur length, Poisson scale or mask probability.
    #[arg(long, requires = "corrupt")]
    strength: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Skip {
    Raw,
    Augmented,
}

/// Overrides shared by `train` and `ablate`.
#[derive(Args, Debug)]
struct TrainOverrides {
    /// JSON file with optional "train" and "network" sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    few_shot: Option<usize>,
    /// Uniform WT-Aug keep probability for every stage and sub-band.
    #[arg(long)]
    keep_prob: Option<f64>,
    /// Stage map fed to the CCU skip slot when fusion is on.
    #[arg(long, value_enum)]
    ccu_skip: Option<Skip>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_arm)]
    arm: Option<AugArm>,
    /// Replace fusion with plain concatenation.
    #[arg(long)]
    no_cg_fuse: bool,
    #[arg(long, env = "AUGSEG_SEED")]
    seed: Option<u64>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory or manifest file.
    #[arg(long)]
    data: PathBuf,
    /// Per-sample CSV destination; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pixel spacing for HD95.
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated arms; append "/nocg" to disable fusion.
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_arm_spec)]
    arms: Vec<ArmSpec>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Directory for ablation.csv and wilcoxon.json.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args, Debug)]
struct DwtArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Writes <prefix>_LL.daug, _LH, _HL and _HH.
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args, Debug)]
struct WtAugArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// One value for every sub-band, or four for LL,LH,HL,HH.
    #[arg(long, value_delimiter = ',', default_value = "0.8")]
    keep_prob: Vec<f64>,
    #[arg(long, env = "AUGSEG_SEED")]
    seed: Option<u64>,
    /// Draw an independent mask per batch item and channel.
    #[arg(long)]
    per_channel: bool,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false, id = "mode")]
struct MetricsModes {
    /// Predicted mask (PGM, pixel = class index); needs --gt.
    #[arg(long, requires = "gt")]
    pred: Option<PathBuf>,
    /// Text file of paired values: one "a,b" pair or one difference per line.
    #[arg(long)]
    wilcoxon: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[command(flatten)]
    mode: MetricsModes,
    /// Ground-truth mask (PGM).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Classes including background.
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
}

#[derive(Args, Debug)]
struct FeatvizArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Batch item to visualize.
    #[arg(long, default_value_t = 0)]
    sample: usize,
}

fn parse_corruption_kind(s: &str) -> Result<CorruptionKind, String> {
    s.parse().map_err(|_| "expected brightness, motion_blur, poisson or rand_mask".to_string())
}

const ARM_NAMES: &str = "expected none, image_level, feature_spatial or feature_wavelet";

fn parse_arm(s: &str) -> Result<AugArm, String> {
    s.parse().map_err(|_| ARM_NAMES.to_string())
}

fn parse_arm_spec(s: &str) -> Result<ArmSpec, String> {
    s.parse().map_err(|_| format!("{ARM_NAMES}, optionally followed by /nocg"))
}

/// Contents of a `--config` file for `train` and `ablate`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub network: NetworkConfig,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> augseg::Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> augseg::Result<()> {
    fs::write(path, contents).map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
}

fn mkdir(path: &Path) -> augseg::Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Input(format!("cannot create {}: {e}", path.display())))
}

impl TrainOverrides {
    fn resolve(&self) -> augseg::Result<RunConfig> {
        let mut rc: RunConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => RunConfig::default(),
        };
        let t = &mut rc.train;
        t.epochs = self.epochs.unwrap_or(t.epochs);
        t.adam.lr = self.lr.unwrap_or(t.adam.lr);
        t.batch_size = self.batch_size.unwrap_or(t.batch_size);
        t.few_shot = self.few_shot.unwrap_or(t.few_shot);
        if let Some(p) = self.keep_prob {
            rc.network = rc.network.with_uniform_keep_prob(p);
        }
        if let Some(s) = self.ccu_skip {
            rc.network.ccu_skip = match s {
                Skip::Raw => SkipSource::Raw,
                Skip::Augmented => SkipSource::Augmented,
            };
        }
        Ok(rc)
    }
}

/// Network geometry must match the dataset it trains on.
fn fit_network(net: &mut NetworkConfig, m: &data::Manifest) {
    net.input_hw = (m.height, m.width);
    net.num_classes = m.num_classes;
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> augseg::Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = a.size {
        (cfg.height, cfg.width) = (s, s);
    }
    cfg.num_classes = a.classes.unwrap_or(cfg.num_classes);
    cfg.validate().map_err(|e| Error::Input(e.to_string()))?;
    let seed = a.seed.unwrap_or(0);
    let spec = a
        .corrupt
        .map(|k| k.with_strength(a.strength).map(|corruption| CorruptionSpec { corruption, seed }))
        .transpose()
        .map_err(|e| Error::Input(e.to_string()))?;
    let mut samples: Vec<(Split, Sample)> = Vec::new();
    for (split, n) in [(Split::Train, a.count), (Split::Test, a.test_count)] {
        samples.extend(generate_split(&cfg, seed, split, n)?.into_iter().map(|s| (split, s)));
    }
    if let Some(spec) = spec {
        for (_, s) in samples.iter_mut() {
            // Each sample gets its own draw, keyed by its generation seed.
            let own = CorruptionSpec { seed: spec.seed ^ s.seed, ..spec };
            s.image = corrupt(&s.image, &own)?;
        }
    }
    let refs: Vec<(Split, &Sample)> = samples.iter().map(|(sp, s)| (*sp, s)).collect();
    let m = write_dataset(&a.out, &refs, Some(&cfg), spec.as_ref())?;
    writeln!(out, "wrote {} samples to {}", m.samples.len(), a.out.display()).ok();
    Ok(())
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> augseg::Result<()> {
    let mut rc = a.overrides.resolve()?;
    let (m, samples) = load_split(&a.data, Split::Train)?;
    fit_network(&mut rc.network, &m);
    if let Some(arm) = a.arm {
        rc.train.arm = arm;
    }
    if a.no_cg_fuse {
        rc.network.cg_fuse = false;
    }
    rc.train.seed = a.seed.unwrap_or(rc.train.seed);
    let outcome = train::<f32>(&rc.train, &rc.network, &samples)?;
    mkdir(&a.out)?;
    outcome.checkpoint.save(&a.out)?;
    write_file(&a.out.join("train_log.csv"), log_csv(&outcome.log))?;
    if let Some(last) = outcome.log.last() {
        writeln!(out, "epochs {} loss {:.6} train_dice {:.4}", outcome.log.len(), last.loss, last.train_dice).ok();
    }
    writeln!(out, "checkpoint {}", a.out.display()).ok();
    Ok(())
}

fn evaluate_dir<T: Scalar>(ckpt: &Path, samples: &[Sample], spacing: f64) -> augseg::Result<EvalReport> {
    let c = Checkpoint::<T>::load(ckpt)?;
    evaluate(&c.network, samples, spacing)
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> augseg::Result<()> {
    let manifest: CheckpointManifest = Checkpoint::<f32>::read_manifest(&a.checkpoint)?;
    let (m, samples) = load_split(&a.data, Split::Test)?;
    if (m.height, m.width) != manifest.network.input_hw || m.num_classes != manifest.network.num_classes {
        return Err(Error::Input("dataset geometry does not match the checkpoint".into()));
    }
    let report = match manifest.dtype {
        augseg::io::DType::F64 => evaluate_dir::<f64>(&a.checkpoint, &samples, a.spacing)?,
        _ => evaluate_dir::<f32>(&a.checkpoint, &samples, a.spacing)?,
    };
    match &a.out {
        Some(p) => {
            write_file(p, report.to_csv())?;
            writeln!(out, "samples {} mean_dice {:.4} mean_hd95 {:.3}", report.records.len(), report.mean_dice, report.mean_hd95).ok();
        }
        None => {
            write!(out, "{}", report.to_csv()).ok();
        }
    }
    Ok(())
}

fn cmd_ablate(a: &AblateArgs, out: &mut dyn Write) -> augseg::Result<()> {
    let mut rc = a.overrides.resolve()?;
    let (m, train_set) = load_split(&a.data, Split::Train)?;
    let (_, test_set) = load_split(&a.data, Split::Test)?;
    fit_network(&mut rc.network, &m);
    if let Some(s) = &a.seeds {
        rc.train.seeds = s.clone();
    }
    let report = ablation_run::<f32>(&a.arms, &rc.train, &rc.network, &train_set, &test_set, |arm, r| {
        writeln!(out, "{} seed {} dice {:.4} hd95 {:.3}", arm.name, r.seed, r.mean_dice, r.mean_hd95).ok();
    })?;
    mkdir(&a.out)?;
    write_file(&a.out.join("ablation.csv"), report.to_csv())?;
    write_file(&a.out.join("wilcoxon.json"), report.wilcoxon_json()?)?;
    write!(out, "{}", report.to_csv()).ok();
    Ok(())
}

fn dwt_any<T: Scalar>(f: &Tensor<T>, prefix: &str) -> augseg::Result<Vec<String>>
where
    Tensor<T>: IntoAny,
{
    let s = haar_dwt2(f)?;
    let mut written = Vec::new();
    for b in Band::ALL {
        let path = format!("{prefix}_{}.daug", b.name());
        write_daug(&path, &s.band(b).clone().into_any())?;
        written.push(path);
    }
    Ok(written)
}

fn float_input(path: &Path) -> augseg::Result<AnyTensor> {
    let t = read_daug(path)?;
    match t {
        AnyTensor::U8(_) => Err(Error::Input(format!("{} holds u8 data; a float tensor is required", path.display()))),
        AnyTensor::F32(_) | AnyTensor::F64(_) => {
            if t.shape().len() != 4 {
                return Err(Error::Input(format!("{} has shape {:?}; expected [N, C, H, W]", path.display(), t.shape())));
            }
            Ok(t)
        }
    }
}

fn cmd_dwt(a: &DwtArgs, out: &mut dyn Write) -> augseg::Result<()> {
    let files = match float_input(&a.input)? {
        AnyTensor::F32(t) => dwt_any(&t, &a.out_prefix)?,
        AnyTensor::F64(t) => dwt_any(&t, &a.out_prefix)?,
        AnyTensor::U8(_) => unreachable!("rejected by float_input"),
    };
    for f in files {
        writeln!(out, "{f}").ok();
    }
    Ok(())
}

fn wt_aug_any<T: Scalar>(f: &Tensor<T>, cfg: &WtAugConfig) -> augseg::Result<AnyTensor>
where
    Tensor<T>: IntoAny,
{
    let masks = make_masks(band_shape(f)?, cfg, &mut cfg.rng())?;
    Ok(wt_aug_with_masks(f, &masks)?.into_any())
}

fn cmd_wt_aug(a: &WtAugArgs, out: &mut dyn Write) -> augseg::Result<()> {
    let keep_prob: [f64; 4] = match a.keep_prob[..] {
        [p] => [p; 4],
        [a0, a1, a2, a3] => [a0, a1, a2, a3],
        _ => return Err(Error::Input("--keep-prob takes one value or four (LL,LH,HL,HH)".into())),
    };
    let cfg = WtAugConfig { keep_prob, seed: a.seed.unwrap_or(0), channel_shared: !a.per_channel };
    cfg.validate().map_err(|e| Error::Input(e.to_string()))?;
    let t = match float_input(&a.input)? {
        AnyTensor::F32(t) => wt_aug_any(&t, &cfg)?,
        AnyTensor::F64(t) => wt_aug_any(&t, &cfg)?,
        AnyTensor::U8(_) => unreachable!("rejected by float_input"),
    };
    write_daug(&a.out, &t)?;
    writeln!(out, "{}", a.out.display()).ok();
    Ok(())
}

fn read_mask(path: &Path, classes: usize) -> augseg::Result<LabelMask> {
    let img = read_pnm(path)?;
    if img.channels != 1 {
        return Err(Error::Input(format!("{} is not a grayscale mask", path.display())));
    }
    LabelMask::new([1, img.height, img.width], img.data, classes).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn parse_paired(text: &str) -> augseg::Result<Vec<f64>> {
    let mut diffs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| Error::Input(format!("line {}: {s:?} is not a number", i + 1))))
            .collect::<augseg::Result<_>>()?;
        match vals[..] {
            [d] => diffs.push(d),
            [x, y] => diffs.push(x - y),
            _ => return Err(Error::Input(format!("line {}: expected one or two values", i + 1))),
        }
    }
    Ok(diffs)
}

fn cmd_metrics(a: &MetricsArgs, out: &mut dyn Write) -> augseg::Result<()> {
    if let Some(path) = &a.mode.wilcoxon {
        let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let diffs = parse_paired(&text)?;
        let r = wilcoxon_signed_rank(&diffs).map_err(|e| Error::Input(e.to_string()))?;
        writeln!(out, "{}", serde_json::to_string_pretty(&r)?).ok();
        return Ok(());
    }
    let (pred, gt) = (a.mode.pred.as_ref().expect("clap group"), a.gt.as_ref().expect("clap requires"));
    let (p, g) = (read_mask(pred, a.classes)?, read_mask(gt, a.classes)?);
    if p.dims() != g.dims() {
        return Err(Error::Input(format!("mask sizes differ: {:?} vs {:?}", p.dims(), g.dims())));
    }
    let id = pred.file_stem().map_or("pred".into(), |s| s.to_string_lossy().into_owned());
    let rec = MetricsRecord::compute(&id, &p, &g, a.spacing)?;
    writeln!(out, "{METRICS_CSV_HEADER}").ok();
    for row in rec.csv_rows() {
        writeln!(out, "{row}").ok();
    }
    Ok(())
}

fn cmd_featviz(a: &FeatvizArgs, out: &mut dyn Write) -> augseg::Result<()> {
    let t: Tensor<f64> = float_input(&a.input)?.to_float();
    let n = t.shape()[0];
    if a.sample >= n {
        return Err(Error::Input(format!("--sample {} out of range for a batch of {n}", a.sample)));
    }
    if t.shape()[1] < 3 {
        return Err(Error::Input(format!("featviz needs at least 3 channels, got {}", t.shape()[1])));
    }
    let (img, pca) = viz::featviz(&t.item0(a.sample)?)?;
    write_pnm(&a.out, &img)?;
    let ratios: Vec<String> = (0..3).map(|i| format!("{:.4}", pca.explained_ratio(i))).collect();
    writeln!(out, "explained variance ratio {}", ratios.join(" ")).ok();
    Ok(())
}

fn cmd_selftest(out: &mut dyn Write) -> augseg::Result<()> {
    let checks = augseg::selftest::run_all();
    for c in &checks {
        writeln!(out, "{} {}{}", if c.passed { "PASS" } else { "FAIL" }, c.name, if c.detail.is_empty() { String::new() } else { format!(" ({})", c.detail) }).ok();
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Error::Contract(format!("{failed} self-test checks failed")));
    }
    Ok(())
}

fn dispatch(cmd: &Command, out: &mut dyn Write) -> augseg::Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Ablate(a) => cmd_ablate(a, out),
        Command::Dwt(a) => cmd_dwt(a, out),
        Command::WtAug(a) => cmd_wt_aug(a, out),
        Command::Metrics(a) => cmd_metrics(a, out),
        Command::Featviz(a) => cmd_featviz(a, out),
        Command::Selftest => cmd_selftest(out),
    }
}

/// Parse `args` (including the program name) and run the subcommand.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    write!(out, "{}", e.render()).ok();
                    0
                }
                _ => {
                    write!(err, "{}", e.render()).ok();
                    1
                }
            };
        }
    };
    match dispatch(&cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            writeln!(err, "augseg: {e}").ok();
            if e.is_input_error() {
                1
            } else {
                2
            }
        }
    }
}
