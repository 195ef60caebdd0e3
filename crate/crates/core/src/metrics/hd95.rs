//! 95th-percentile symmetric Hausdorff distance between mask boundaries.
//!
//! Boundary pixels of class `c` are pixels of that class with at least one
//! 4-neighbour of another class, or lying on the image border. Each boundary
//! pixel contributes its distance to the nearest boundary pixel of the other
//! mask; both directed lists are pooled and the nearest-rank 95th percentile
//! (`ceil(0.95 n)`-th smallest) is reported. Nearest-boundary distances come
//! from an exact squared Euclidean distance transform.
//!
//! Both masks empty gives 0; exactly one empty gives the image diagonal.

use super::LabelMask;

const INF: i64 = i64::MAX / 4;

pub fn boundary(mask: &[u8], h: usize, w: usize, c: usize) -> Vec<(usize, usize)> {
    let is = |y: usize, x: usize| mask[y * w + x] as usize == c;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !is(y, x) {
                continue;
            }
            let edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
            if edge || !is(y - 1, x) || !is(y + 1, x) || !is(y, x - 1) || !is(y, x + 1) {
                out.push((y, x));
            }
        }
    }
    out
}

/// Lower envelope of parabolas; `f` uses `INF` for "no seed".
fn dt1d(f: &[i64], out: &mut [i64]) {
    let mut v: Vec<usize> = Vec::with_capacity(f.len());
    let mut z: Vec<f64> = Vec::with_capacity(f.len());
    for q in 0..f.len() {
        if f[q] >= INF {
            continue;
        }
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let (qi, pi) = (q as i64, p as i64);
            let s = ((f[q] + qi * qi) - (f[p] + pi * pi)) as f64 / (2 * (qi - pi)) as f64;
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
                continue;
            }
            v.push(q);
            z.push(s);
            break;
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = INF);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as i64 - v[k] as i64;
        *o = d * d + f[v[k]];
    }
}

/// Squared distance from every pixel to the nearest seed.
fn squared_edt(seeds: &[(usize, usize)], h: usize, w: usize) -> Vec<i64> {
    let mut grid = vec![INF; h * w];
    for &(y, x) in seeds {
        grid[y * w + x] = 0;
    }
    let mut col = vec![0; h];
    let mut tmp = vec![0; h.max(w)];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        dt1d(&col, &mut tmp[..h]);
        for y in 0..h {
            grid[y * w + x] = tmp[y];
        }
    }
    for y in 0..h {
        let row = grid[y * w..(y + 1) * w].to_vec();
        dt1d(&row, &mut grid[y * w..(y + 1) * w]);
    }
    grid
}

/// Nearest-rank percentile index for `n` sorted values: `ceil(q n) − 1`.
pub(crate) fn nearest_rank_95(n: usize) -> usize {
    (95 * n).div_ceil(100).max(1) - 1
}

pub fn hd95_plane(pred: &[u8], gt: &[u8], h: usize, w: usize, c: usize, spacing: f64) -> f64 {
    let bp = boundary(pred, h, w, c);
    let bg = boundary(gt, h, w, c);
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return ((h * h + w * w) as f64).sqrt() * spacing,
        _ => {}
    }
    let to_gt = squared_edt(&bg, h, w);
    let to_pred = squared_edt(&bp, h, w);
    let mut d: Vec<f64> = bp
        .iter()
        .map(|&(y, x)| to_gt[y * w + x])
        .chain(bg.iter().map(|&(y, x)| to_pred[y * w + x]))
        .map(|s| (s as f64).sqrt() * spacing)
        .collect();
    d.sort_by(f64::total_cmp);
    d[nearest_rank_95(d.len())]
}

/// HD95 for class `c`, averaged over the batch items of the masks.
pub fn hd95(pred: &LabelMask, gt: &LabelMask, c: usize, spacing: f64) -> f64 {
    assert_eq!(pred.dims(), gt.dims(), "hd95 needs equal shapes");
    let (n, h, w) = gt.dims();
    let plane = h * w;
    (0..n)
        .map(|i| {
            let r = i * plane..(i + 1) * plane;
            hd95_plane(&pred.data()[r.clone()], &gt.data()[r], h, w, c, spacing)
        })
        .sum::<f64>()
        / n as f64
}
