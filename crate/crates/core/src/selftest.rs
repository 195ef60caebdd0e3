//! Fast built-in invariant suite, run by `augseg selftest`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::pnm::{self, PnmImage};
use crate::error::Result;
use crate::fusion::cross_attention;
use crate::gradcheck::{finite_diff_check, DEFAULT_EPS};
use crate::io::daug::{self, AnyTensor};
use crate::metrics::{dice_score, hd95, wilcoxon_signed_rank, LabelMask};
use crate::tensor::Tensor;
use crate::wavelet::{haar_dwt2, haar_idwt2, wt_aug_with_masks, MaskSet};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn wavelet_round_trip() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for shape in [[1, 3, 8, 8], [2, 2, 5, 7], [1, 1, 3, 2]] {
        let f = Tensor::<f64>::randn(&shape, 1.0, &mut rng)?;
        worst = worst.max(haar_idwt2(&haar_dwt2(&f)?)?.max_abs_diff(&f)?);
    }
    Ok(check("wavelet round trip", worst < 1e-10, format!("max err {worst:.3e}")))
}

fn wt_aug_ll_only() -> Result<Check> {
    let f = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])?;
    let masks = MaskSet::keep_only(&[1, 1, 1, 1], [true, false, false, false])?;
    let out = wt_aug_with_masks(&f, &masks)?;
    let err = out.data().iter().map(|v| (v - 2.5).abs()).fold(0.0, f64::max);
    Ok(check("wt-aug LL-only block mean", err < 1e-12, format!("max err {err:.3e}")))
}

fn attention_example() -> Result<Check> {
    let q = Tensor::<f64>::from_f64(&[1, 1, 1], &[1.0])?;
    let k = Tensor::from_f64(&[1, 2, 1], &[1.0, -1.0])?;
    let v = Tensor::from_f64(&[1, 2, 1], &[1.0, 0.0])?;
    let out = cross_attention(&q, &k, &v, 1)?.item()?;
    Ok(check("attention scalar example", (out - 0.88080).abs() < 1e-4, format!("{out:.5}")))
}

fn softmax_gradient() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Tensor::<f64>::randn(&[2, 5], 1.0, &mut rng)?;
    let w = Tensor::<f64>::randn(&[2, 5], 1.0, &mut rng)?;
    let err = finite_diff_check(
        |t, xv| {
            let s = t.softmax(xv, 1)?;
            let wv = t.constant(w.clone());
            let p = t.mul(s, wv)?;
            t.sum(p)
        },
        &x,
        DEFAULT_EPS,
    )?;
    Ok(check("softmax gradient", err < 1e-4, format!("rel err {err:.3e}")))
}

fn metric_values() -> Result<Check> {
    let gt = LabelMask::new([1, 4, 4], vec![0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0], 2)?;
    let pred = LabelMask::new([1, 4, 4], vec![0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0], 2)?;
    let d = dice_score(&pred, &gt, 1);
    let h = hd95(&pred, &gt, 1, 1.0);
    let w = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0])?;
    let ok = (d - 6.0 / 7.0).abs() < 1e-12 && (h - 1.0).abs() < 1e-12 && (w.p - 0.0625).abs() < 1e-12;
    Ok(check("dice / hd95 / wilcoxon values", ok, format!("dice {d:.4}, hd95 {h}, p {}", w.p)))
}

fn format_round_trips() -> Result<Check> {
    let t = AnyTensor::F32(Tensor::from_f64(&[1, 2, 3], &[0.5, -1.0, 3.25, 1e-7, 0.0, -0.0])?);
    let daug_ok = daug::decode(&daug::encode(&t))? == t;
    let img = PnmImage::rgb(2, 1, vec![0, 10, 20, 255, 128, 1])?;
    let pnm_ok = pnm::decode(&pnm::encode(&img))? == img;
    let truncated = daug::decode(&daug::encode(&t)[..12]).is_err() && pnm::decode(b"P5\n2 2\n255\n\x01").is_err();
    Ok(check("format round trips", daug_ok && pnm_ok && truncated, String::new()))
}

/// Run every check; errors inside a check count as failures.
pub fn run_all() -> Vec<Check> {
    let suite: [(&'static str, fn() -> Result<Check>); 6] = [
        ("wavelet round trip", wavelet_round_trip),
        ("wt-aug LL-only block mean", wt_aug_ll_only),
        ("attention scalar example", attention_example),
        ("softmax gradient", softmax_gradient),
        ("dice / hd95 / wilcoxon values", metric_values),
        ("format round trips", format_round_trips),
    ];
    suite
        .into_iter()
        .map(|(name, f)| f().unwrap_or_else(|e| check(name, false, e.to_string())))
        .collect()
}
