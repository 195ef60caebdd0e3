//! PCA feature-map visualization.
//!
//! Every spatial location of a `[1, C, H, W]` map is a `C`-vector. Vectors are
//! mean-centered, the top principal directions come from deflated power
//! iteration on the `C×C` covariance, and each projected component is min-max
//! scaled to `[0, 255]` to form one color channel.

use crate::data::PnmImage;
use crate::error::{contract_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const POWER_TOL: f64 = 1e-8;
pub const POWER_MAX_ITER: usize = 1000;
/// Value written for a channel with no spread.
pub const FLAT_GRAY: u8 = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit principal directions, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each direction.
    pub variances: Vec<f64>,
    pub total_variance: f64,
}

impl Pca {
    pub fn explained_ratio(&self, i: usize) -> f64 {
        if self.total_variance > 0.0 {
            self.variances[i] / self.total_variance
        } else {
            0.0
        }
    }

    /// Scores of every location on component `i`, row-major.
    pub fn project(&self, vectors: &[Vec<f64>], i: usize) -> Vec<f64> {
        let d = &self.components[i];
        vectors.iter().map(|v| v.iter().zip(&self.mean).zip(d).map(|((x, m), w)| (x - m) * w).sum()).collect()
    }
}

/// Per-location channel vectors of a single-sample map.
pub fn location_vectors<T: Scalar>(f: &Tensor<T>) -> Result<(Vec<Vec<f64>>, (usize, usize))> {
    let (n, c, h, w) = f.dims4()?;
    if n != 1 {
        return Err(contract_err!("featviz takes one sample, got a batch of {n}"));
    }
    let data = f.data();
    let vecs = (0..h * w).map(|p| (0..c).map(|ch| data[ch * h * w + p].to_f64_lossy()).collect()).collect();
    Ok((vecs, (h, w)))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
    }
}

/// Deterministic start vector that is not orthogonal to generic directions.
fn start_vector(c: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut v: Vec<f64> = (0..c).map(|i| 1.0 + 0.37 * ((i * 7 + basis.len() * 3) % 11) as f64).collect();
    orthogonalize(&mut v, basis);
    if normalize(&mut v) < 1e-12 {
        // Fall back to the first coordinate axis not yet spanned.
        for axis in 0..c {
            let mut e = vec![0.0; c];
            e[axis] = 1.0;
            orthogonalize(&mut e, basis);
            if normalize(&mut e) > 1e-6 {
                return e;
            }
        }
    }
    v
}

fn covariance(vectors: &[Vec<f64>], mean: &[f64]) -> Vec<Vec<f64>> {
    let c = mean.len();
    let mut cov = vec![vec![0.0; c]; c];
    for v in vectors {
        for i in 0..c {
            let di = v[i] - mean[i];
            for j in i..c {
                cov[i][j] += di * (v[j] - mean[j]);
            }
        }
    }
    let n = vectors.len().max(1) as f64;
    for i in 0..c {
        for j in i..c {
            cov[i][j] /= n;
            cov[j][i] = cov[i][j];
        }
    }
    cov
}

/// Top `k` principal directions of `vectors` (each of length `C >= k`).
pub fn pca(vectors: &[Vec<f64>], k: usize) -> Result<Pca> {
    let c = vectors.first().map_or(0, Vec::len);
    if vectors.is_empty() || c < k || k == 0 {
        return Err(contract_err!("PCA needs 1 <= k <= C and at least one vector, got k = {k}, C = {c}"));
    }
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; c];
    for v in vectors {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x / n);
    }
    let mut cov = covariance(vectors, &mean);
    let mut total_variance: f64 = (0..c).map(|i| cov[i][i]).sum();
    // Rounding in the mean leaves a residue of order eps² on constant input.
    if total_variance <= 1e-24 * (1.0 + dot(&mean, &mean)) {
        total_variance = 0.0;
        cov.iter_mut().for_each(|row| row.fill(0.0));
    }
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v = start_vector(c, &components);
        for _ in 0..POWER_MAX_ITER {
            let mut next: Vec<f64> = cov.iter().map(|row| dot(row, &v)).collect();
            // Deflation leaves round-off along earlier directions.
            orthogonalize(&mut next, &components);
            if normalize(&mut next) <= f64::MIN_POSITIVE {
                break; // v spans the null space: any unit vector is an eigenvector
            }
            let sign = dot(&next, &v).signum();
            let step = next.iter().zip(&v).map(|(a, b)| (a - sign * b).powi(2)).sum::<f64>().sqrt();
            let converged = step < POWER_TOL;
            v = next;
            if converged {
                break;
            }
        }
        let cv: Vec<f64> = cov.iter().map(|row| dot(row, &v)).collect();
        let lambda = dot(&v, &cv).max(0.0);
        for i in 0..c {
            for j in 0..c {
                cov[i][j] -= lambda * v[i] * v[j];
            }
        }
        components.push(v);
        variances.push(lambda);
    }
    Ok(Pca { mean, components, variances, total_variance })
}

/// Min-max scale to `[0, 255]`; a constant channel becomes [`FLAT_GRAY`].
pub fn to_bytes(scores: &[f64]) -> Vec<u8> {
    let (lo, hi) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = hi - lo;
    if !(span > 1e-12 * hi.abs().max(lo.abs()).max(1.0)) {
        return vec![FLAT_GRAY; scores.len()];
    }
    scores.iter().map(|&x| ((x - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8).collect()
}

/// Color PCA image of a `[1, C, H, W]` feature map, one component per channel.
pub fn featviz<T: Scalar>(f: &Tensor<T>) -> Result<(PnmImage, Pca)> {
    let (vecs, (h, w)) = location_vectors(f)?;
    let p = pca(&vecs, 3)?;
    let channels: Vec<Vec<u8>> = (0..3)
        .map(|i| if p.total_variance > 0.0 { to_bytes(&p.project(&vecs, i)) } else { vec![FLAT_GRAY; h * w] })
        .collect();
    let mut rgb = Vec::with_capacity(3 * h * w);
    for px in 0..h * w {
        rgb.extend(channels.iter().map(|ch| ch[px]));
    }
    Ok((PnmImage::rgb(w, h, rgb)?, p))
}
