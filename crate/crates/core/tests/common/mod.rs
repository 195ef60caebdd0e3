#![allow(dead_code)]

use augseg::autodiff::{Tape, Var};
use augseg::fusion::{cg_fuse_on_tape, cross_attention_on_tape, FusionDims, FusionParams, FusionVars};
use augseg::gradcheck::{finite_diff_check, rel_err, DEFAULT_EPS};
use augseg::metrics::{ce_loss, combined_loss, dice_loss, LabelMask};
use augseg::model::{Mode, Network, NetworkConfig};
use augseg::wavelet::{wt_aug_on_tape, Band, MaskSet};
use augseg::{Result, Tensor, Unary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OP_TOL: f64 = 1e-4;
pub const NETWORK_TOL: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut rng(seed)).unwrap()
}

/// `Σ out ⊙ W` for a fixed random `W`, so every output coordinate matters.
pub fn probe(t: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let w = t.constant(Tensor::randn(t.shape(out), 1.0, &mut rng(seed ^ 0x5eed))?);
    let p = t.mul(out, w)?;
    t.sum(p)
}

pub fn random_mask(n: usize, h: usize, w: usize, k: usize, seed: u64) -> LabelMask {
    let mut r = rng(seed);
    LabelMask::new([n, h, w], (0..n * h * w).map(|_| r.random_range(0..k as u8)).collect(), k).unwrap()
}

fn fusion_weights(dims: FusionDims, seed: u64) -> FusionParams<f64> {
    let mut p = FusionParams::init(dims, &mut rng(seed)).unwrap();
    // Nonzero output path so attention gradients are exercised.
    let mut r = rng(seed + 1);
    for (_, t) in p.weights.iter_mut() {
        *t = Tensor::randn(t.shape(), 0.5, &mut r).unwrap();
    }
    p
}

fn bind_except(t: &mut Tape<f64>, p: &FusionParams<f64>, name: &str, x: Var) -> FusionVars {
    let mut vars = p.weights.try_map::<_, std::convert::Infallible>(|_, w| Ok(t.constant(w.clone()))).unwrap();
    for (n, v) in vars.iter_mut() {
        if n == name {
            *v = x;
        }
    }
    vars
}

type Check = (String, f64);

fn unary_checks(out: &mut Vec<Check>) -> Result<()> {
    // Inputs kept away from kinks and from the log/sqrt domain edge.
    let base = randn(&[3, 4], 1);
    let away = base.map(|v| if v.abs() < 0.1 { v + 0.3 } else { v });
    let positive = base.map(|v| v.abs() + 0.2);
    for (name, kind, x) in [
        ("relu", Unary::Relu, &away),
        ("gelu", Unary::Gelu, &base),
        ("exp", Unary::Exp, &base),
        ("log", Unary::Log, &positive),
        ("sqrt", Unary::Sqrt, &positive),
    ] {
        let e = finite_diff_check(|t, v| { let y = t.unary(kind, v)?; probe(t, y, 2) }, x, DEFAULT_EPS)?;
        out.push((name.into(), e));
    }
    Ok(())
}

fn binary_checks(out: &mut Vec<Check>) -> Result<()> {
    let a = randn(&[2, 3, 4], 3);
    let b_full = randn(&[2, 3, 4], 4).map(|v| v.abs() + 0.5);
    let b_bcast = randn(&[3, 1], 5).map(|v| v.abs() + 0.5);
    type Bin = fn(&mut Tape<f64>, Var, Var) -> Result<Var>;
    let ops: [(&str, Bin); 4] = [("add", Tape::add), ("sub", Tape::sub), ("mul", Tape::mul), ("div", Tape::div)];
    for (name, op) in ops {
        for (tag, b) in [("full", &b_full), ("broadcast", &b_bcast)] {
            let ea = finite_diff_check(|t, v| { let bv = t.constant(b.clone()); let y = op(t, v, bv)?; probe(t, y, 6) }, &a, DEFAULT_EPS)?;
            let eb = finite_diff_check(|t, v| { let av = t.constant(a.clone()); let y = op(t, av, v)?; probe(t, y, 6) }, b, DEFAULT_EPS)?;
            out.push((format!("{name} ({tag}) lhs"), ea));
            out.push((format!("{name} ({tag}) rhs"), eb));
        }
    }
    let x = randn(&[2, 5], 7);
    out.push(("scale".into(), finite_diff_check(|t, v| { let y = t.scale(v, -1.7)?; probe(t, y, 8) }, &x, DEFAULT_EPS)?));
    out.push(("shift".into(), finite_diff_check(|t, v| { let y = t.shift(v, 0.3)?; let y = t.mul(y, y)?; probe(t, y, 8) }, &x, DEFAULT_EPS)?));
    Ok(())
}

fn shape_checks(out: &mut Vec<Check>) -> Result<()> {
    let a = randn(&[2, 3, 4], 9);
    let b = randn(&[2, 4, 5], 10);
    let shared = randn(&[4, 5], 11);
    out.push(("matmul lhs".into(), finite_diff_check(|t, v| { let bv = t.constant(b.clone()); let y = t.matmul(v, bv)?; probe(t, y, 12) }, &a, DEFAULT_EPS)?));
    out.push(("matmul rhs".into(), finite_diff_check(|t, v| { let av = t.constant(a.clone()); let y = t.matmul(av, v)?; probe(t, y, 12) }, &b, DEFAULT_EPS)?));
    out.push(("matmul shared rhs".into(), finite_diff_check(|t, v| { let av = t.constant(a.clone()); let y = t.matmul(av, v)?; probe(t, y, 13) }, &shared, DEFAULT_EPS)?));
    out.push(("transpose".into(), finite_diff_check(|t, v| { let y = t.transpose(v)?; probe(t, y, 14) }, &a, DEFAULT_EPS)?));
    out.push(("permute".into(), finite_diff_check(|t, v| { let y = t.permute(v, &[2, 0, 1])?; probe(t, y, 15) }, &a, DEFAULT_EPS)?));
    out.push(("reshape".into(), finite_diff_check(|t, v| { let y = t.reshape(v, &[6, 4])?; probe(t, y, 16) }, &a, DEFAULT_EPS)?));
    out.push(("sum".into(), finite_diff_check(|t, v| { let y = t.mul(v, v)?; t.sum(y) }, &a, DEFAULT_EPS)?));
    out.push(("mean".into(), finite_diff_check(|t, v| { let y = t.mul(v, v)?; t.mean(y) }, &a, DEFAULT_EPS)?));
    out.push(("sum_axes".into(), finite_diff_check(|t, v| { let y = t.sum_axes(v, &[0, 2])?; let y = t.mul(y, y)?; probe(t, y, 17) }, &a, DEFAULT_EPS)?));
    out.push((
        "concat".into(),
        finite_diff_check(|t, v| { let other = t.constant(randn(&[2, 2, 4], 18)); let y = t.concat(&[v, other, v], 1)?; probe(t, y, 19) }, &a, DEFAULT_EPS)?,
    ));
    out.push(("narrow".into(), finite_diff_check(|t, v| { let y = t.narrow(v, 2, 1, 2)?; probe(t, y, 20) }, &a, DEFAULT_EPS)?));
    for axis in [0, 1, 2] {
        out.push((format!("softmax axis {axis}"), finite_diff_check(|t, v| { let y = t.softmax(v, axis)?; probe(t, y, 21) }, &a, DEFAULT_EPS)?));
        out.push((format!("log_softmax axis {axis}"), finite_diff_check(|t, v| { let y = t.log_softmax(v, axis)?; probe(t, y, 22) }, &a, DEFAULT_EPS)?));
    }
    out.push(("normalize_last".into(), finite_diff_check(|t, v| { let y = t.normalize_last(v, 1e-5)?; probe(t, y, 23) }, &a, DEFAULT_EPS)?));
    Ok(())
}

fn spatial_checks(out: &mut Vec<Check>) -> Result<()> {
    let x = randn(&[2, 3, 5, 6], 30);
    let k = randn(&[4, 3, 3, 3], 31);
    let bias = randn(&[4], 32);
    for (stride, pad) in [(1, 1), (2, 0), (2, 1)] {
        let tag = format!("stride {stride} pad {pad}");
        out.push((
            format!("conv2d input ({tag})"),
            finite_diff_check(|t, v| { let kv = t.constant(k.clone()); let bv = t.constant(bias.clone()); let y = t.conv2d(v, kv, Some(bv), stride, pad)?; probe(t, y, 33) }, &x, DEFAULT_EPS)?,
        ));
        out.push((
            format!("conv2d kernel ({tag})"),
            finite_diff_check(|t, v| { let xv = t.constant(x.clone()); let y = t.conv2d(xv, v, None, stride, pad)?; probe(t, y, 33) }, &k, DEFAULT_EPS)?,
        ));
    }
    out.push((
        "conv2d bias".into(),
        finite_diff_check(|t, v| { let xv = t.constant(x.clone()); let kv = t.constant(k.clone()); let y = t.conv2d(xv, kv, Some(v), 1, 1)?; probe(t, y, 34) }, &bias, DEFAULT_EPS)?,
    ));
    // Transposed kernels are [C_in, C_out, kh, kw].
    let kt = randn(&[3, 4, 2, 2], 35);
    out.push((
        "conv_transpose2d input".into(),
        finite_diff_check(|t, v| { let kv = t.constant(kt.clone()); let bv = t.constant(bias.clone()); let y = t.conv_transpose2d(v, kv, Some(bv), 2, 0)?; probe(t, y, 36) }, &x, DEFAULT_EPS)?,
    ));
    out.push((
        "conv_transpose2d kernel".into(),
        finite_diff_check(|t, v| { let xv = t.constant(x.clone()); let y = t.conv_transpose2d(xv, v, None, 2, 0)?; probe(t, y, 36) }, &kt, DEFAULT_EPS)?,
    ));
    out.push((
        "conv_transpose2d bias".into(),
        finite_diff_check(|t, v| { let xv = t.constant(x.clone()); let kv = t.constant(kt.clone()); let y = t.conv_transpose2d(xv, kv, Some(v), 2, 0)?; probe(t, y, 37) }, &bias, DEFAULT_EPS)?,
    ));
    for (ho, wo) in [(10, 12), (3, 4), (7, 5)] {
        out.push((
            format!("resize_bilinear to {ho}x{wo}"),
            finite_diff_check(|t, v| { let y = t.resize_bilinear(v, ho, wo)?; probe(t, y, 38) }, &x, DEFAULT_EPS)?,
        ));
    }
    Ok(())
}

fn wavelet_checks(out: &mut Vec<Check>) -> Result<()> {
    for shape in [[1, 2, 4, 6], [2, 1, 5, 3]] {
        let x = randn(&shape, 40);
        for band in Band::ALL {
            out.push((
                format!("haar {} {:?}", band.name(), shape),
                finite_diff_check(|t, v| { let y = t.haar_band(v, band)?; probe(t, y, 41) }, &x, DEFAULT_EPS)?,
            ));
        }
        let (h, w) = (shape[2], shape[3]);
        let bshape = [shape[0], shape[1], h.div_ceil(2), w.div_ceil(2)];
        let bands: Vec<Tensor<f64>> = (0..4).map(|i| randn(&bshape, 42 + i)).collect();
        for i in 0..4 {
            out.push((
                format!("haar synthesis band {i} {:?}", shape),
                finite_diff_check(
                    |t, v| {
                        let mut vars = bands.iter().map(|b| t.constant(b.clone())).collect::<Vec<_>>();
                        vars[i] = v;
                        let y = t.haar_synthesis([vars[0], vars[1], vars[2], vars[3]], h, w)?;
                        probe(t, y, 46)
                    },
                    &bands[i],
                    DEFAULT_EPS,
                )?,
            ));
        }
        let mut r = rng(47);
        let masks = augseg::wavelet::make_masks::<f64, _>(bshape, &augseg::wavelet::WtAugConfig::uniform(0.6), &mut r)?;
        out.push((
            format!("wt_aug fixed masks {:?}", shape),
            finite_diff_check(|t, v| { let y = wt_aug_on_tape(t, v, &masks)?; probe(t, y, 48) }, &x, DEFAULT_EPS)?,
        ));
        let ones = MaskSet::<f64>::ones(&bshape)?;
        out.push((
            format!("wt_aug sum, identity masks {:?}", shape),
            finite_diff_check(|t, v| { let y = wt_aug_on_tape(t, v, &ones)?; t.sum(y) }, &x, DEFAULT_EPS)?,
        ));
    }
    Ok(())
}

fn attention_checks(out: &mut Vec<Check>) -> Result<()> {
    let (q, k, v) = (randn(&[2, 3, 8], 50), randn(&[2, 5, 8], 51), randn(&[2, 5, 8], 52));
    let run = |t: &mut Tape<f64>, which: usize, x: Var| -> Result<Var> {
        let mut vars = [&q, &k, &v].map(|m| t.constant(m.clone()));
        vars[which] = x;
        let (o, _) = cross_attention_on_tape(t, vars[0], vars[1], vars[2], 2)?;
        probe(t, o, 53)
    };
    for (i, (name, x)) in [("q", &q), ("k", &k), ("v", &v)].into_iter().enumerate() {
        out.push((format!("cross_attention {name}"), finite_diff_check(|t, xv| run(t, i, xv), x, DEFAULT_EPS)?));
    }

    let dims = FusionDims { c_dec: 8, c_enc: 6, model_dim: 8, heads: 2, ff_mult: 2, positional_encoding: false };
    let params = fusion_weights(dims, 54);
    let dec = randn(&[2, 8, 3, 2], 55);
    let enc = randn(&[2, 6, 3, 2], 56);
    let fuse = |t: &mut Tape<f64>, dv: Var, ev: Var, w: &FusionVars, d: &FusionDims| -> Result<Var> {
        let y = cg_fuse_on_tape(t, dv, ev, w, d)?;
        probe(t, y, 57)
    };
    out.push((
        "cg_fuse decoder input".into(),
        finite_diff_check(|t, x| { let ev = t.constant(enc.clone()); let w = bind_except(t, &params, "", x); fuse(t, x, ev, &w, &dims) }, &dec, DEFAULT_EPS)?,
    ));
    out.push((
        "cg_fuse encoder input".into(),
        finite_diff_check(|t, x| { let dv = t.constant(dec.clone()); let w = bind_except(t, &params, "", x); fuse(t, dv, x, &w, &dims) }, &enc, DEFAULT_EPS)?,
    ));
    for (name, w) in params.weights.iter() {
        out.push((
            format!("cg_fuse {name}"),
            finite_diff_check(
                |t, x| {
                    let (dv, ev) = (t.constant(dec.clone()), t.constant(enc.clone()));
                    let vars = bind_except(t, &params, name, x);
                    fuse(t, dv, ev, &vars, &dims)
                },
                w,
                DEFAULT_EPS,
            )?,
        ));
    }
    let with_pos = FusionDims { positional_encoding: true, ..dims };
    out.push((
        "cg_fuse with positions".into(),
        finite_diff_check(|t, x| { let ev = t.constant(enc.clone()); let w = bind_except(t, &params, "", x); fuse(t, x, ev, &w, &with_pos) }, &dec, DEFAULT_EPS)?,
    ));
    Ok(())
}

fn loss_checks(out: &mut Vec<Check>) -> Result<()> {
    let logits = randn(&[2, 3, 4, 5], 60);
    let target = random_mask(2, 4, 5, 3, 61);
    out.push(("ce_loss".into(), finite_diff_check(|t, v| ce_loss(t, v, &target), &logits, DEFAULT_EPS)?));
    out.push(("dice_loss".into(), finite_diff_check(|t, v| { let p = t.softmax(v, 1)?; dice_loss(t, p, &target) }, &logits, DEFAULT_EPS)?));
    out.push(("combined_loss".into(), finite_diff_check(|t, v| Ok(combined_loss(t, v, &target)?.total), &logits, DEFAULT_EPS)?));
    // A class absent from the target still has a smooth Dice term.
    let absent = LabelMask::new([1, 2, 2], vec![0, 1, 1, 0], 3)?;
    let small = randn(&[1, 3, 2, 2], 62);
    out.push(("combined_loss, absent class".into(), finite_diff_check(|t, v| Ok(combined_loss(t, v, &absent)?.total), &small, DEFAULT_EPS)?));
    Ok(())
}

/// Worst relative error of every differentiable op, f64, small shapes.
pub fn op_gradient_suite() -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    unary_checks(&mut out)?;
    binary_checks(&mut out)?;
    shape_checks(&mut out)?;
    spatial_checks(&mut out)?;
    wavelet_checks(&mut out)?;
    attention_checks(&mut out)?;
    loss_checks(&mut out)?;
    Ok(out)
}

pub fn small_network_config() -> NetworkConfig {
    NetworkConfig { input_hw: (32, 32), ..Default::default() }
}

fn network_loss(net: &Network<f64>, feats: &[Tensor<f64>; 4], target: &LabelMask) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = net.params.bind(&mut tape);
    let logits = net.forward_on_tape(&mut tape, &bound, feats, Mode::Eval, &mut rng(0))?;
    let l = combined_loss(&mut tape, logits, target)?.total;
    tape.value(l).item()
}

/// Relative error of the combined-loss gradient with respect to `coords`
/// entries of parameter `name`, through the whole decoder, at 32×32.
pub fn network_weight_check(name: &str, coords: &[usize], seed: u64) -> Result<f64> {
    let mut net = Network::<f64>::new(small_network_config(), seed)?;
    // Give the fusion output path weight so every parameter is live.
    let mut r = rng(seed + 100);
    for (pname, t) in net.params.names().to_vec().iter().zip(net.params.tensors_mut()) {
        if pname.ends_with("w_o") {
            *t = Tensor::randn(t.shape(), 0.1, &mut r)?;
        }
    }
    let image = Tensor::<f64>::uniform(&[2, 1, 32, 32], 0.0, 1.0, &mut r)?;
    let feats = net.encode(&image, &["a", "b"])?;
    let target = random_mask(2, 32, 32, 3, seed + 7);

    let mut tape = Tape::new();
    let bound = net.params.bind(&mut tape);
    let logits = net.forward_on_tape(&mut tape, &bound, &feats, Mode::Eval, &mut rng(0))?;
    let l = combined_loss(&mut tape, logits, &target)?.total;
    tape.backward(l)?;
    let analytic = tape.grad(bound.var(name)?).expect("parameter has a gradient").to_vec();

    let mut worst = 0.0f64;
    for &i in coords {
        let base = net.params.get(name)?.data()[i];
        let mut at = |delta: f64| -> Result<f64> {
            net.params.get_mut(name)?.data_mut()[i] = base + delta;
            network_loss(&net, &feats, &target)
        };
        let eps = 1e-6;
        let numeric = (at(eps)? - at(-eps)?) / (2.0 * eps);
        net.params.get_mut(name)?.data_mut()[i] = base;
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    Ok(worst)
}

/// Boundary by definition: a class pixel on the border or with a 4-neighbour
/// of another class.
fn brute_boundary(m: &[u8], h: usize, w: usize, c: u8) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if m[(y * w as i64 + x) as usize] != c {
                continue;
            }
            let on_edge = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(dy, dx)| {
                let (yy, xx) = (y + dy, x + dx);
                yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 || m[(yy * w as i64 + xx) as usize] != c
            });
            if on_edge {
                out.push((y, x));
            }
        }
    }
    out
}

pub fn brute_dice(p: &[u8], g: &[u8], c: u8) -> f64 {
    let a = p.iter().filter(|&&v| v == c).count();
    let b = g.iter().filter(|&&v| v == c).count();
    let both = p.iter().zip(g).filter(|(x, y)| **x == c && **y == c).count();
    if a + b == 0 { 1.0 } else { 2.0 * both as f64 / (a + b) as f64 }
}

/// All-pairs nearest distances, pooled, nearest-rank 95th percentile.
pub fn brute_hd95(p: &[u8], g: &[u8], h: usize, w: usize, c: u8) -> f64 {
    let (bp, bg) = (brute_boundary(p, h, w, c), brute_boundary(g, h, w, c));
    if bp.is_empty() && bg.is_empty() {
        return 0.0;
    }
    if bp.is_empty() || bg.is_empty() {
        return ((h * h + w * w) as f64).sqrt();
    }
    let nearest = |from: &[(i64, i64)], to: &[(i64, i64)]| -> Vec<f64> {
        from.iter()
            .map(|a| to.iter().map(|b| (a.0 - b.0).pow(2) + (a.1 - b.1).pow(2)).min().unwrap())
            .map(|s| (s as f64).sqrt())
            .collect()
    };
    let mut d = nearest(&bp, &bg);
    d.extend(nearest(&bg, &bp));
    d.sort_by(f64::total_cmp);
    let rank = (0.95 * d.len() as f64).ceil() as usize;
    d[rank.max(1) - 1]
}

/// Two-sided exact signed-rank p by enumerating all `2ⁿ` sign patterns.
pub fn enumerated_wilcoxon_p(d: &[f64]) -> f64 {
    let d: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    // Average ranks by counting: rank = #smaller + (#equal + 1) / 2.
    let ranks: Vec<f64> = d
        .iter()
        .map(|x| {
            let less = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let eq = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total: f64 = ranks.iter().sum();
    let w = w_plus.min(total - w_plus);
    let hits = (0u32..1 << n)
        .filter(|bits| {
            let s: f64 = (0..n).filter(|i| bits >> i & 1 == 1).map(|i| ranks[i]).sum();
            s <= w + 1e-9
        })
        .count();
    (2.0 * hits as f64 / (1u64 << n) as f64).min(1.0)
}

/// Random label plane made of a few rectangles, so boundaries are non-trivial.
pub fn random_blocky_plane(h: usize, w: usize, k: u8, r: &mut impl Rng) -> Vec<u8> {
    let mut m = vec![0u8; h * w];
    for _ in 0..r.random_range(0..5) {
        let (y0, x0) = (r.random_range(0..h), r.random_range(0..w));
        let (y1, x1) = (r.random_range(y0..h) + 1, r.random_range(x0..w) + 1);
        let c = r.random_range(0..k);
        for y in y0..y1 {
            for x in x0..x1 {
                m[y * w + x] = c;
            }
        }
    }
    // Sprinkle isolated pixels.
    for _ in 0..r.random_range(0..6) {
        m[r.random_range(0..h * w)] = r.random_range(0..k);
    }
    m
}

/// Random shape up to `2×8×16×16` with spatial extents `>= 2`, odd ones included.
pub fn random_shape(r: &mut impl Rng) -> [usize; 4] {
    [r.random_range(1..=2), r.random_range(1..=8), r.random_range(2..=16), r.random_range(2..=16)]
}

/// Worst round-trip error over `count` random tensors, `(f32, f64)`.
pub fn wavelet_round_trip_errors(count: usize, seed: u64) -> (f64, f64) {
    use augseg::wavelet::{haar_dwt2, haar_idwt2};
    let mut r = rng(seed);
    let (mut e32, mut e64) = (0.0f64, 0.0f64);
    for _ in 0..count {
        let shape = random_shape(&mut r);
        let f = Tensor::<f64>::randn(&shape, 1.0, &mut r).unwrap();
        e64 = e64.max(haar_idwt2(&haar_dwt2(&f).unwrap()).unwrap().max_abs_diff(&f).unwrap());
        let g = f.cast::<f32>();
        e32 = e32.max(haar_idwt2(&haar_dwt2(&g).unwrap()).unwrap().max_abs_diff(&g).unwrap());
    }
    (e32, e64)
}

/// Worst `|wt_aug(F) − F|` with keep probability 1, over `count` tensors.
pub fn wt_aug_identity_error(count: usize, seed: u64) -> f64 {
    use augseg::wavelet::{wt_aug, WtAugConfig};
    let mut r = rng(seed);
    let cfg = WtAugConfig { channel_shared: false, ..WtAugConfig::uniform(1.0) };
    (0..count)
        .map(|_| {
            let f = Tensor::<f32>::randn(&random_shape(&mut r), 1.0, &mut r).unwrap();
            wt_aug(&f, &cfg, &mut r).unwrap().max_abs_diff(&f).unwrap()
        })
        .fold(0.0, f64::max)
}

/// Worst deviation of an LL-only reconstruction from its 2×2 block means,
/// even extents only (odd extents reflect-pad the last block).
pub fn ll_only_block_mean_error(count: usize, seed: u64) -> f64 {
    use augseg::wavelet::{band_shape, wt_aug_with_masks};
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let [n, c, h, w] = random_shape(&mut r);
        let (h, w) = (h & !1, w & !1);
        let f = Tensor::<f32>::randn(&[n, c, h, w], 1.0, &mut r).unwrap();
        let masks = MaskSet::keep_only(&band_shape(&f).unwrap(), [true, false, false, false]).unwrap();
        let out = wt_aug_with_masks(&f, &masks).unwrap();
        for i in 0..n {
            for ch in 0..c {
                for by in (0..h).step_by(2) {
                    for bx in (0..w).step_by(2) {
                        let cells = [(by, bx), (by, bx + 1), (by + 1, bx), (by + 1, bx + 1)];
                        let mean = cells.iter().map(|&(y, x)| f.at(&[i, ch, y, x]) as f64).sum::<f64>() / 4.0;
                        for &(y, x) in &cells {
                            worst = worst.max((out.at(&[i, ch, y, x]) as f64 - mean).abs());
                        }
                    }
                }
            }
        }
    }
    worst
}

pub struct AttentionReport {
    pub row_sum_error: f64,
    pub single_key_exact: bool,
    pub permutation_error: f64,
    pub example: f64,
}

pub fn attention_report(trials: usize, seed: u64) -> AttentionReport {
    use augseg::fusion::{attention_weights, cross_attention};
    let mut r = rng(seed);
    let (mut row_sum_error, mut single_key_exact, mut permutation_error) = (0.0f64, true, 0.0f64);
    for _ in 0..trials {
        let (n, tq, tk, heads) = (r.random_range(1..=2), r.random_range(1..=6), r.random_range(2..=7), r.random_range(1..=3));
        let d = heads * r.random_range(1..=4);
        let q = Tensor::<f64>::randn(&[n, tq, d], 2.0, &mut r).unwrap();
        let k = Tensor::<f64>::randn(&[n, tk, d], 2.0, &mut r).unwrap();
        let v = Tensor::<f64>::randn(&[n, tk, d], 1.0, &mut r).unwrap();

        let a = attention_weights(&q, &k, heads).unwrap();
        for row in a.data().chunks(tk) {
            row_sum_error = row_sum_error.max((row.iter().sum::<f64>() - 1.0).abs());
        }

        let k1 = Tensor::<f64>::randn(&[n, 1, d], 1.0, &mut r).unwrap();
        let v1 = Tensor::<f64>::randn(&[n, 1, d], 1.0, &mut r).unwrap();
        let o1 = cross_attention(&q, &k1, &v1, heads).unwrap();
        for b in 0..n {
            for t in 0..tq {
                for j in 0..d {
                    single_key_exact &= o1.at(&[b, t, j]) == v1.at(&[b, 0, j]);
                }
            }
        }

        let mut perm: Vec<usize> = (0..tk).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut r);
        let permute = |x: &Tensor<f64>| {
            Tensor::from_fn(&[n, tk, d], |i| {
                let (b, t, j) = (i / (tk * d), i / d % tk, i % d);
                x.at(&[b, perm[t], j])
            })
            .unwrap()
        };
        let base = cross_attention(&q, &k, &v, heads).unwrap();
        let shuffled = cross_attention(&q, &permute(&k), &permute(&v), heads).unwrap();
        permutation_error = permutation_error.max(base.max_abs_diff(&shuffled).unwrap());
    }
    let q = Tensor::<f64>::from_f64(&[1, 1, 1], &[1.0]).unwrap();
    let k = Tensor::from_f64(&[1, 2, 1], &[1.0, -1.0]).unwrap();
    let v = Tensor::from_f64(&[1, 2, 1], &[1.0, 0.0]).unwrap();
    let example = cross_attention(&q, &k, &v, 1).unwrap().item().unwrap();
    AttentionReport { row_sum_error, single_key_exact, permutation_error, example }
}

pub struct MetricReport {
    pub dice_mismatches: usize,
    pub hd95_mismatches: usize,
    pub wilcoxon_mismatches: usize,
    pub wilcoxon_cases: usize,
    pub five_positive_p: f64,
}

pub fn metric_report(pairs: usize, seed: u64) -> MetricReport {
    use augseg::metrics::{dice_score, hd95, wilcoxon_signed_rank};
    let mut r = rng(seed);
    let (h, w, k) = (12, 12, 3u8);
    let (mut dice_mismatches, mut hd95_mismatches) = (0, 0);
    for _ in 0..pairs {
        let p = random_blocky_plane(h, w, k, &mut r);
        let g = random_blocky_plane(h, w, k, &mut r);
        let (pm, gm) = (LabelMask::new([1, h, w], p.clone(), 3).unwrap(), LabelMask::new([1, h, w], g.clone(), 3).unwrap());
        for c in 0..k {
            dice_mismatches += (dice_score(&pm, &gm, c as usize) != brute_dice(&p, &g, c)) as usize;
            hd95_mismatches += (hd95(&pm, &gm, c as usize, 1.0) != brute_hd95(&p, &g, h, w, c)) as usize;
        }
    }
    let mut wilcoxon_mismatches = 0;
    let mut wilcoxon_cases = 0;
    for n in 1..=12 {
        for _ in 0..20 {
            // Small integers force ties and zeros.
            let d: Vec<f64> = (0..n).map(|_| r.random_range(-6i32..=6) as f64 * 0.25).collect();
            let got = wilcoxon_signed_rank(&d).unwrap().p;
            wilcoxon_mismatches += ((got - enumerated_wilcoxon_p(&d)).abs() > 1e-12) as usize;
            wilcoxon_cases += 1;
        }
    }
    let five_positive_p = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap().p;
    MetricReport { dice_mismatches, hd95_mismatches, wilcoxon_mismatches, wilcoxon_cases, five_positive_p }
}

/// Round-trips both formats bit-exactly and feeds truncated or corrupted
/// bytes to both decoders; returns the first failure.
pub fn format_report(seed: u64) -> std::result::Result<usize, String> {
    use augseg::data::pnm::{self, PnmImage};
    use augseg::io::daug::{self, AnyTensor, ByteTensor};
    let mut r = rng(seed);
    let mut checked = 0;
    for i in 0..40 {
        let shape: Vec<usize> = (0..r.random_range(1..=4)).map(|_| r.random_range(1..=5)).collect();
        let numel: usize = shape.iter().product();
        let t = match i % 3 {
            0 => AnyTensor::F32(Tensor::new(&shape, (0..numel).map(|_| f32::from_bits(r.random::<u32>() & 0x7f7f_ffff)).collect()).unwrap()),
            1 => AnyTensor::F64(Tensor::randn(&shape, 1e3, &mut r).unwrap()),
            _ => AnyTensor::U8(ByteTensor::new(&shape, (0..numel).map(|_| r.random()).collect()).unwrap()),
        };
        let bytes = daug::encode(&t);
        match daug::decode(&bytes) {
            Ok(back) if back == t => {}
            other => return Err(format!("DAUG round trip failed for {shape:?}: {other:?}")),
        }
        for cut in 0..bytes.len() {
            if daug::decode(&bytes[..cut]).is_ok() {
                return Err(format!("DAUG truncated to {cut} bytes decoded"));
            }
        }
        let mut flipped = bytes.clone();
        let at = r.random_range(0..flipped.len());
        flipped[at] ^= 0xff;
        let _ = daug::decode(&flipped);

        let (w, h, rgb) = (r.random_range(1..=9), r.random_range(1..=9), i % 2 == 0);
        let img = if rgb {
            PnmImage::rgb(w, h, (0..3 * w * h).map(|_| r.random()).collect()).unwrap()
        } else {
            PnmImage::gray(w, h, (0..w * h).map(|_| r.random()).collect()).unwrap()
        };
        let enc = pnm::encode(&img);
        if pnm::decode(&enc).ok().as_ref() != Some(&img) {
            return Err(format!("PNM round trip failed for {w}x{h}"));
        }
        for cut in 0..enc.len() {
            if pnm::decode(&enc[..cut]).is_ok() {
                return Err(format!("PNM truncated to {cut} bytes decoded"));
            }
        }
        let mut flipped = enc.clone();
        let at = r.random_range(0..flipped.len().min(12));
        flipped[at] = b'#' ^ flipped[at];
        let _ = pnm::decode(&flipped);
        checked += 1;
    }
    Ok(checked)
}

pub fn tiny_train_config(arm: augseg::trainer::AugArm, epochs: usize) -> augseg::trainer::TrainConfig {
    augseg::trainer::TrainConfig { arm, epochs, few_shot: 2, ..Default::default() }
}

/// Trains every arm briefly and checks the encoder checksum, then reloads the
/// last checkpoint and compares eval-mode logits bit for bit.
pub fn frozen_encoder_report() -> std::result::Result<String, String> {
    use augseg::data::{generate_split, Split, SynthConfig};
    use augseg::model::{Checkpoint, Encoder};
    use augseg::trainer::{train, AugArm};
    let synth = SynthConfig { height: 32, width: 32, ..Default::default() };
    let samples = generate_split(&synth, 9, Split::Train, 4).map_err(|e| e.to_string())?;
    let net_cfg = NetworkConfig { input_hw: (32, 32), ..Default::default() };
    let reference = Encoder::<f32>::new(&net_cfg.encoder).map_err(|e| e.to_string())?.checksum();
    let mut last = None;
    for arm in AugArm::ALL {
        let out = train::<f32>(&tiny_train_config(arm, 3), &net_cfg, &samples).map_err(|e| e.to_string())?;
        if out.encoder_checksum_before != reference || out.encoder_checksum_after != reference {
            return Err(format!("{}: encoder checksum moved", arm.name()));
        }
        if out.checkpoint.network.encoder.checksum() != reference {
            return Err(format!("{}: trained network carries a different encoder", arm.name()));
        }
        last = Some(out);
    }
    let ckpt = last.expect("four arms").checkpoint;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    ckpt.save(dir.path()).map_err(|e| e.to_string())?;
    let back = Checkpoint::<f32>::load(dir.path()).map_err(|e| e.to_string())?;
    let images = augseg::trainer::image_batch::<f32>(&samples.iter().map(|s| &s.image).collect::<Vec<_>>()).map_err(|e| e.to_string())?;
    let ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    let a = ckpt.network.forward_eval(&images, &ids).map_err(|e| e.to_string())?;
    let b = back.network.forward_eval(&images, &ids).map_err(|e| e.to_string())?;
    let c = back.network.forward_eval(&images, &ids).map_err(|e| e.to_string())?;
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    if bits(&a) != bits(&b) || bits(&b) != bits(&c) {
        return Err("reloaded eval logits differ".into());
    }
    if back.network.params != ckpt.network.params {
        return Err("reloaded parameters differ".into());
    }
    Ok(format!("4 arms, checksum {}…, {} logits bit-identical", &reference[..12], a.numel()))
}

pub struct OverfitReport {
    pub final_train_dice: f64,
    pub eval_dice: f64,
    pub decreasing_steps: usize,
    pub losses: Vec<f64>,
}

/// One 64×64 sample, no augmentation, 200 epochs.
pub fn overfit_report() -> Result<OverfitReport> {
    use augseg::data::{gen_sample, SynthConfig};
    use augseg::metrics::mean_foreground_dice;
    use augseg::trainer::{image_batch, train, AugArm, TrainConfig};
    let sample = gen_sample(21, &SynthConfig::default())?;
    let cfg = TrainConfig { arm: AugArm::None, epochs: 200, few_shot: 1, batch_size: 1, ..Default::default() };
    let out = train::<f32>(&cfg, &NetworkConfig::default(), std::slice::from_ref(&sample))?;
    let losses: Vec<f64> = out.log.iter().map(|e| e.loss).collect();
    let decreasing_steps = losses[..21].windows(2).filter(|w| w[1] < w[0]).count();
    let pred = out.checkpoint.network.predict(&image_batch::<f32>(&[&sample.image])?, &[&sample.id])?;
    Ok(OverfitReport {
        final_train_dice: out.log.last().map_or(0.0, |e| e.train_dice),
        eval_dice: mean_foreground_dice(&pred, &sample.mask),
        decreasing_steps,
        losses,
    })
}
