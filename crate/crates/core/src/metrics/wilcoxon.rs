//! Two-sided Wilcoxon signed-rank test on paired differences.
//!
//! Zero differences are dropped; tied magnitudes share the average rank.
//! `W = min(W+, W-)`. For `n <= EXACT_MAX_N` the p-value is exact: the null
//! distribution of `W+` over all `2^n` sign patterns is counted by dynamic
//! programming on doubled ranks (integers even with half-integer ties).
//! Above that a tie-corrected normal approximation with continuity
//! correction is used.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EXACT_MAX_N: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Exact,
    Normal,
    /// Every difference was zero; `p = 1`.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Non-zero differences used.
    pub n: usize,
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p: f64,
    pub method: TestMethod,
}

/// Average ranks of `|d|` (1-based) in input order, plus tie group sizes.
fn average_ranks(abs: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0.0; abs.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && abs[idx[j]] == abs[idx[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

/// `P(W+ <= w)` doubled-rank form: counts sign patterns with sum `<= limit`.
fn exact_lower_tail(doubled: &[usize], limit: usize) -> f64 {
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let below: u64 = counts[..=limit.min(total)].iter().sum();
    below as f64 / (1u64 << doubled.len()) as f64
}

pub fn wilcoxon_signed_rank(differences: &[f64]) -> Result<WilcoxonResult> {
    if let Some(bad) = differences.iter().find(|d| !d.is_finite()) {
        return Err(Error::NumericDomain(format!("non-finite difference {bad}")));
    }
    let d: Vec<f64> = differences.iter().copied().filter(|&v| v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult { n: 0, w: 0.0, w_plus: 0.0, w_minus: 0.0, p: 1.0, method: TestMethod::Degenerate });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    // fold from +0.0: an empty float `sum` is -0.0.
    let w_plus = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).fold(0.0, |a, (_, r)| a + r);
    let w_minus = d.iter().zip(&ranks).filter(|(v, _)| **v < 0.0).fold(0.0, |a, (_, r)| a + r);
    let w = w_plus.min(w_minus);

    let (p, method) = if n <= EXACT_MAX_N {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let tail = exact_lower_tail(&doubled, (2.0 * w).round() as usize);
        ((2.0 * tail).min(1.0), TestMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let z = ((mean - w) - 0.5).max(0.0) / var.sqrt();
        ((libm::erfc(z / std::f64::consts::SQRT_2)).min(1.0), TestMethod::Normal)
    };
    Ok(WilcoxonResult { n, w, w_plus, w_minus, p, method })
}
