use super::LabelMask;
use crate::autodiff::{Tape, Var};
use crate::error::{contract_err, Result};
use crate::scalar::Scalar;

/// Smoothing constant of the Dice loss.
pub const DICE_EPS: f64 = 1e-5;

fn check_target<T: Scalar>(tape: &Tape<T>, scores: Var, target: &LabelMask) -> Result<()> {
    let (n, k, h, w) = tape.value(scores).dims4()?;
    if (n, h, w) != target.dims() || k != target.num_classes() {
        return Err(contract_err!(
            "scores {:?} do not match target {:?} with {} classes",
            tape.shape(scores),
            target.dims(),
            target.num_classes()
        ));
    }
    Ok(())
}

/// Mean over pixels of `−log softmax(logits)[target]`.
pub fn ce_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, target: &LabelMask) -> Result<Var> {
    check_target(tape, logits, target)?;
    let (n, _, h, w) = tape.value(logits).dims4()?;
    let logp = tape.log_softmax(logits, 1)?;
    let oh = tape.constant(target.one_hot());
    let picked = tape.mul(logp, oh)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -T::one() / T::from_f64_lossy((n * h * w) as f64))
}

/// `1 − mean_{c ≥ 1} (2 Σ p·t + ε) / (Σ p + Σ t + ε)` with sums pooled over
/// batch and space. A class absent from the target scores `ε / (Σ p + ε)`,
/// which only approaches 1 when the prediction puts no mass on it.
pub fn dice_loss<T: Scalar>(tape: &mut Tape<T>, probs: Var, target: &LabelMask) -> Result<Var> {
    check_target(tape, probs, target)?;
    let k = target.num_classes();
    let eps = T::from_f64_lossy(DICE_EPS);
    let oh = tape.constant(target.one_hot());
    let inter = tape.mul(probs, oh)?;
    let inter = tape.sum_axes(inter, &[0, 2, 3])?;
    let psum = tape.sum_axes(probs, &[0, 2, 3])?;
    let tsum = tape.sum_axes(oh, &[0, 2, 3])?;
    let num = tape.scale(inter, T::from_f64_lossy(2.0))?;
    let num = tape.shift(num, eps)?;
    let den = tape.add(psum, tsum)?;
    let den = tape.shift(den, eps)?;
    let ratio = tape.div(num, den)?;
    let fg = tape.narrow(ratio, 1, 1, k - 1)?;
    let mean = tape.mean(fg)?;
    let neg = tape.scale(mean, -T::one())?;
    tape.shift(neg, T::one())
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub ce: Var,
    pub dice: Var,
    pub probs: Var,
}

/// Cross-entropy plus Dice loss, both with weight 1.
pub fn combined_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, target: &LabelMask) -> Result<LossParts> {
    let ce = ce_loss(tape, logits, target)?;
    let probs = tape.softmax(logits, 1)?;
    let dice = dice_loss(tape, probs, target)?;
    let total = tape.add(ce, dice)?;
    Ok(LossParts { total, ce, dice, probs })
}
