//! Central finite-difference verification of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{contract_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Relative error between an analytic and a numeric derivative.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-12)
}

/// Max over all coordinates of `|a − n| / max(|a|, |n|, 1e-12)` where `a` is the
/// tape gradient of `f` at `x` and `n` the central difference with step `eps`.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    finite_diff_check_at(f, x, eps, &coords)
}

/// [`finite_diff_check`] restricted to the listed flat coordinates.
pub fn finite_diff_check_at<T, F>(f: F, x: &Tensor<T>, eps: f64, coords: &[usize]) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let analytic = analytic_grad(&f, x)?;
    let mut worst = 0.0f64;
    for &i in coords {
        let n = numeric_partial(&f, x, i, eps)?;
        worst = worst.max(rel_err(analytic[i].to_f64_lossy(), n));
    }
    Ok(worst)
}

pub fn analytic_grad<T, F>(f: &F, x: &Tensor<T>) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.detached());
    let loss = f(&mut tape, xv)?;
    tape.backward(loss)?;
    Ok(tape.grad_tensor(xv).into_data())
}

pub fn numeric_partial<T, F>(f: &F, x: &Tensor<T>, i: usize, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(contract_err!("finite-difference step must be positive"));
    }
    let eval = |delta: f64| -> Result<f64> {
        let mut xp = x.detached();
        let v = xp.data()[i];
        xp.data_mut()[i] = v + T::from_f64_lossy(delta);
        let mut tape = Tape::new();
        let xv = tape.constant(xp);
        let out = f(&mut tape, xv)?;
        Ok(tape.value(out).item()?.to_f64_lossy())
    };
    Ok((eval(eps)? - eval(-eps)?) / (2.0 * eps))
}
