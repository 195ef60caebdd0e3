mod common;

use augseg::viz::{featviz, location_vectors, pca, FLAT_GRAY};
use augseg::Tensor;
use common::rng;
use proptest::prelude::*;
use rand::Rng;

/// Cyclic Jacobi eigensolver for a small symmetric matrix; eigenpairs sorted
/// by descending eigenvalue.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> Vec<(f64, Vec<f64>)> {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let (c, s) = (1.0 / (t * t + 1.0).sqrt(), t / (t * t + 1.0).sqrt());
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n).map(|i| (a[i][i], (0..n).map(|k| v[k][i]).collect())).collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    pairs
}

fn dense_covariance(vecs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, c) = (vecs.len() as f64, vecs[0].len());
    let mean: Vec<f64> = (0..c).map(|j| vecs.iter().map(|v| v[j]).sum::<f64>() / n).collect();
    (0..c).map(|i| (0..c).map(|j| vecs.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).sum::<f64>() / n).collect()).collect()
}

fn random_map(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    // Channels mix a few latent fields with distinct scales.
    let mut r = rng(seed);
    let latent: Vec<Vec<f64>> = (0..3).map(|k| (0..h * w).map(|_| r.random_range(-1.0..1.0) * (3.0 - k as f64)).collect()).collect();
    let mix: Vec<[f64; 3]> = (0..c).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
    Tensor::from_fn(&[1, c, h, w], |i| {
        let (ch, p) = (i / (h * w), i % (h * w));
        (0..3).map(|k| mix[ch][k] * latent[k][p]).sum::<f64>() + 0.05 * r.random_range(-1.0..1.0)
    })
    .unwrap()
}

#[test]
fn rank_one_map_is_explained_by_one_component() {
    let mut r = rng(1);
    let dir: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
    let f = Tensor::from_fn(&[1, 6, 7, 9], |i| dir[i / 63] * ((i % 63) as f64 * 0.37).sin()).unwrap();
    let (img, p) = featviz(&f).unwrap();
    assert!(p.explained_ratio(0) > 0.999, "{}", p.explained_ratio(0));
    assert_eq!((img.width, img.height, img.channels), (9, 7, 3));
}

#[test]
fn components_match_a_dense_eigensolver() {
    for seed in 0..5 {
        let f = random_map(8, 6, 7, seed);
        let (vecs, _) = location_vectors(&f).unwrap();
        let p = pca(&vecs, 3).unwrap();
        let oracle = jacobi_eigen(dense_covariance(&vecs));
        for i in 0..3 {
            let cos: f64 = p.components[i].iter().zip(&oracle[i].1).map(|(a, b)| a * b).sum();
            assert!(cos.abs() > 0.999, "seed {seed} component {i}: |cos| {}", cos.abs());
            assert!((p.variances[i] - oracle[i].0).abs() < 1e-6 * (1.0 + oracle[i].0));
        }
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = p.components[i].iter().zip(&p.components[j]).map(|(a, b)| a * b).sum();
                assert!((d - (i == j) as u8 as f64).abs() < 1e-6);
            }
        }
        let total: f64 = oracle.iter().map(|e| e.0).sum();
        assert!((p.total_variance - total).abs() < 1e-9 * (1.0 + total));
    }
}

#[test]
fn constant_map_renders_flat_gray() {
    let (img, p) = featviz(&Tensor::<f64>::full(&[1, 5, 4, 4], -2.5).unwrap()).unwrap();
    assert_eq!(p.total_variance, 0.0);
    assert!(img.data.iter().all(|&b| b == FLAT_GRAY));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn images_span_the_byte_range(seed in any::<u64>(), c in 3usize..8, h in 2usize..9, w in 2usize..9) {
        let f = random_map(c, h, w, seed);
        let (img, p) = featviz(&f).unwrap();
        prop_assert_eq!(img.data.len(), 3 * h * w);
        let ratios: f64 = (0..3).map(|i| p.explained_ratio(i)).sum();
        prop_assert!(ratios <= 1.0 + 1e-9);
        prop_assert!(p.variances.windows(2).all(|v| v[0] >= v[1] - 1e-9));
        for ch in 0..3 {
            let vals: Vec<u8> = img.data.iter().skip(ch).step_by(3).copied().collect();
            if p.variances[ch] > 1e-9 {
                prop_assert_eq!(vals.iter().min(), Some(&0));
                prop_assert_eq!(vals.iter().max(), Some(&255));
            }
        }
    }
}
