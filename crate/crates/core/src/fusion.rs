//! Contextual-guided fusion: multi-head cross-attention where decoder features
//! form the queries and augmented encoder features the keys and values.
//!
//! ```text
//! q   = tokens(dec)                    e = tokens(enc)
//! Q   = norm(q) W_Q    K = norm(e) W_K    V = norm(e) W_V
//! A   = concat_h softmax(Q_h K_hᵀ / sqrt(d_k)) V_h
//! out = q + FF(A W_O)      FF(x) = gelu(x W1 + b1) W2 + b2
//! ```
//!
//! `W_O`, `b1` and `b2` start at zero, so a fresh block is the identity on `dec`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{contract_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionDims {
    pub c_dec: usize,
    pub c_enc: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_mult: usize,
    #[serde(default)]
    pub positional_encoding: bool,
}

impl FusionDims {
    /// Defaults: `D = c_dec`, 4 heads, feed-forward expansion 4, no positions.
    pub fn new(c_dec: usize, c_enc: usize) -> Self {
        FusionDims { c_dec, c_enc, model_dim: c_dec, heads: 4, ff_mult: 4, positional_encoding: false }
    }

    pub fn d_k(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn hidden(&self) -> usize {
        self.ff_mult * self.c_dec
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return Err(contract_err!("model dim {} not divisible by {} heads", self.model_dim, self.heads));
        }
        if self.c_dec == 0 || self.c_enc == 0 || self.ff_mult == 0 {
            return Err(contract_err!("fusion dims must be positive: {:?}", self));
        }
        Ok(())
    }
}

/// Fusion weights; `P` is a tensor when stored and a [`Var`] when bound to a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionWeights<P> {
    pub w_q: P,
    pub w_k: P,
    pub w_v: P,
    pub w_o: P,
    pub ff_w1: P,
    pub ff_b1: P,
    pub ff_w2: P,
    pub ff_b2: P,
}

impl<P> FusionWeights<P> {
    pub const NAMES: [&'static str; 8] = ["w_q", "w_k", "w_v", "w_o", "ff_w1", "ff_b1", "ff_w2", "ff_b2"];

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &P)> {
        let refs = [&self.w_q, &self.w_k, &self.w_v, &self.w_o, &self.ff_w1, &self.ff_b1, &self.ff_w2, &self.ff_b2];
        Self::NAMES.into_iter().zip(refs)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&'static str, &mut P)> {
        let refs = [
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
            &mut self.ff_w1,
            &mut self.ff_b1,
            &mut self.ff_w2,
            &mut self.ff_b2,
        ];
        Self::NAMES.into_iter().zip(refs)
    }

    pub fn try_map<Q, E>(&self, mut f: impl FnMut(&'static str, &P) -> Result<Q, E>) -> Result<FusionWeights<Q>, E> {
        Ok(FusionWeights {
            w_q: f("w_q", &self.w_q)?,
            w_k: f("w_k", &self.w_k)?,
            w_v: f("w_v", &self.w_v)?,
            w_o: f("w_o", &self.w_o)?,
            ff_w1: f("ff_w1", &self.ff_w1)?,
            ff_b1: f("ff_b1", &self.ff_b1)?,
            ff_w2: f("ff_w2", &self.ff_w2)?,
            ff_b2: f("ff_b2", &self.ff_b2)?,
        })
    }
}

pub type FusionVars = FusionWeights<Var>;

#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams<T: Scalar> {
    pub dims: FusionDims,
    pub weights: FusionWeights<Tensor<T>>,
}

impl<T: Scalar> FusionParams<T> {
    pub fn init<R: Rng + ?Sized>(dims: FusionDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let (cd, ce, d, hid) = (dims.c_dec, dims.c_enc, dims.model_dim, dims.hidden());
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        let weights = FusionWeights {
            w_q: Tensor::randn(&[cd, d], fan(cd), rng)?,
            w_k: Tensor::randn(&[ce, d], fan(ce), rng)?,
            w_v: Tensor::randn(&[ce, d], fan(ce), rng)?,
            w_o: Tensor::zeros(&[d, cd])?,
            ff_w1: Tensor::randn(&[cd, hid], fan(cd), rng)?,
            ff_b1: Tensor::zeros(&[hid])?,
            ff_w2: Tensor::randn(&[hid, cd], fan(hid), rng)?,
            ff_b2: Tensor::zeros(&[cd])?,
        };
        Ok(FusionParams { dims, weights })
    }

    pub fn expected_shape(dims: &FusionDims, name: &str) -> Vec<usize> {
        let (cd, ce, d, hid) = (dims.c_dec, dims.c_enc, dims.model_dim, dims.hidden());
        match name {
            "w_q" => vec![cd, d],
            "w_k" | "w_v" => vec![ce, d],
            "w_o" => vec![d, cd],
            "ff_w1" => vec![cd, hid],
            "ff_b1" => vec![hid],
            "ff_w2" => vec![hid, cd],
            _ => vec![cd],
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|(_, t)| t.all_finite())
    }

    /// Record every weight as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> FusionVars {
        self.weights
            .try_map::<_, std::convert::Infallible>(|_, t| Ok(tape.param(t.detached())))
            .unwrap()
    }
}

/// Sequence view of a spatial map.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMap<T: Scalar> {
    /// `[N, H·W, C]`, tokens in row-major spatial order.
    pub tokens: Tensor<T>,
    pub hw: (usize, usize),
}

pub fn flatten_tokens<T: Scalar>(f: &Tensor<T>) -> Result<TokenMap<T>> {
    let (_, _, h, w) = f.dims4()?;
    let mut tape = Tape::new();
    let x = tape.constant(f.detached());
    let t = tokens_on_tape(&mut tape, x)?;
    Ok(TokenMap { tokens: tape.value(t).detached(), hw: (h, w) })
}

pub fn unflatten<T: Scalar>(map: &TokenMap<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let t = tape.constant(map.tokens.detached());
    let x = spatial_on_tape(&mut tape, t, map.hw)?;
    Ok(tape.value(x).detached())
}

/// `[N, C, H, W]` → `[N, H·W, C]`.
pub fn tokens_on_tape<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    let flat = tape.reshape(x, &[n, c, h * w])?;
    tape.permute(flat, &[0, 2, 1])
}

/// `[N, H·W, C]` → `[N, C, H, W]`.
pub fn spatial_on_tape<T: Scalar>(tape: &mut Tape<T>, tokens: Var, hw: (usize, usize)) -> Result<Var> {
    let &[n, t, c] = tape.shape(tokens) else {
        return Err(contract_err!("tokens must be rank 3, got {:?}", tape.shape(tokens)));
    };
    if t != hw.0 * hw.1 {
        return Err(contract_err!("{t} tokens cannot fill a {}x{} map", hw.0, hw.1));
    }
    let chw = tape.permute(tokens, &[0, 2, 1])?;
    tape.reshape(chw, &[n, c, hw.0, hw.1])
}

/// Multi-head scaled dot-product attention. Returns the output `[N, T_q, D]`
/// and the attention weights `[N, h, T_q, T_k]`.
pub fn cross_attention_on_tape<T: Scalar>(tape: &mut Tape<T>, q: Var, k: Var, v: Var, heads: usize) -> Result<(Var, Var)> {
    let (sq, sk, sv) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    let (&[n, tq, d], &[nk, tk, dk_in], &[nv, tv, dv]) = (&sq[..], &sk[..], &sv[..]) else {
        return Err(contract_err!("attention inputs must be rank 3: {:?} {:?} {:?}", sq, sk, sv));
    };
    if heads == 0 || d % heads != 0 {
        return Err(contract_err!("width {d} not divisible by {heads} heads"));
    }
    if (nk, nv) != (n, n) || dk_in != d || dv != d || tv != tk || tk == 0 {
        return Err(contract_err!("attention shape mismatch: Q {:?}, K {:?}, V {:?}", sq, sk, sv));
    }
    let dk = d / heads;
    let split = |tape: &mut Tape<T>, x: Var, t: usize| -> Result<Var> {
        let r = tape.reshape(x, &[n, t, heads, dk])?;
        tape.permute(r, &[0, 2, 1, 3])
    };
    let qh = split(tape, q, tq)?;
    let kh = split(tape, k, tk)?;
    let vh = split(tape, v, tk)?;
    let kt = tape.transpose(kh)?;
    let logits = tape.matmul(qh, kt)?;
    let scaled = tape.scale(logits, T::one() / T::from_f64_lossy(dk as f64).sqrt())?;
    let attn = tape.softmax(scaled, 3)?;
    let ctx = tape.matmul(attn, vh)?;
    let back = tape.permute(ctx, &[0, 2, 1, 3])?;
    Ok((tape.reshape(back, &[n, tq, d])?, attn))
}

pub fn cross_attention<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.constant(q.detached()), tape.constant(k.detached()), tape.constant(v.detached()));
    let (out, _) = cross_attention_on_tape(&mut tape, qv, kv, vv, heads)?;
    Ok(tape.value(out).detached())
}

/// Attention probabilities `[N, h, T_q, T_k]` for the given projections.
pub fn attention_weights<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, heads: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let (qv, kv) = (tape.constant(q.detached()), tape.constant(k.detached()));
    let (_, attn) = cross_attention_on_tape(&mut tape, qv, kv, kv, heads)?;
    Ok(tape.value(attn).detached())
}

/// Fixed 2D sinusoidal encoding `[H·W, C]`: first half of the channels encodes
/// rows, second half columns.
pub fn positional_encoding<T: Scalar>(h: usize, w: usize, c: usize) -> Result<Tensor<T>> {
    let half = c / 2;
    Tensor::from_fn(&[h * w, c], |i| {
        let (tok, ch) = (i / c, i % c);
        let (pos, k, width) = if ch < half { (tok / w, ch, half) } else { (tok % w, ch - half, c - half) };
        let freq = 1.0 / 10000f64.powf((2 * (k / 2)) as f64 / width.max(1) as f64);
        let a = pos as f64 * freq;
        T::from_f64_lossy(if k % 2 == 0 { a.sin() } else { a.cos() })
    })
}

/// Fuse `dec` (queries and residual) with `enc` (keys/values). Both maps must
/// share spatial extents; resampling is the caller's job.
pub fn cg_fuse_on_tape<T: Scalar>(tape: &mut Tape<T>, dec: Var, enc: Var, w: &FusionVars, dims: &FusionDims) -> Result<Var> {
    dims.validate()?;
    let (nd, cd, h, wd) = tape.value(dec).dims4()?;
    let (ne, ce, he, we) = tape.value(enc).dims4()?;
    if (h, wd) != (he, we) || nd != ne {
        return Err(contract_err!("cg_fuse needs matching maps, got decoder {nd}x{h}x{wd} and encoder {ne}x{he}x{we}"));
    }
    if cd != dims.c_dec || ce != dims.c_enc {
        return Err(contract_err!("cg_fuse expects {} / {} channels, got {cd} / {ce}", dims.c_dec, dims.c_enc));
    }
    let q_tokens = tokens_on_tape(tape, dec)?;
    let e_tokens = tokens_on_tape(tape, enc)?;
    let (q_src, e_src) = if dims.positional_encoding {
        let pq = tape.constant(positional_encoding(h, wd, cd)?);
        let pe = tape.constant(positional_encoding(h, wd, ce)?);
        (tape.add(q_tokens, pq)?, tape.add(e_tokens, pe)?)
    } else {
        (q_tokens, e_tokens)
    };
    let eps = T::from_f64_lossy(NORM_EPS);
    let nq = tape.normalize_last(q_src, eps)?;
    let nk = tape.normalize_last(e_src, eps)?;
    let q = tape.matmul(nq, w.w_q)?;
    let k = tape.matmul(nk, w.w_k)?;
    let v = tape.matmul(nk, w.w_v)?;
    let (attn, _) = cross_attention_on_tape(tape, q, k, v, dims.heads)?;
    let proj = tape.matmul(attn, w.w_o)?;
    let h1 = tape.matmul(proj, w.ff_w1)?;
    let h1 = tape.add(h1, w.ff_b1)?;
    let h1 = tape.gelu(h1)?;
    let f = tape.matmul(h1, w.ff_w2)?;
    let f = tape.add(f, w.ff_b2)?;
    let out = tape.add(q_tokens, f)?;
    spatial_on_tape(tape, out, (h, wd))
}

pub fn cg_fuse<T: Scalar>(dec: &Tensor<T>, enc: &Tensor<T>, params: &FusionParams<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let d = tape.constant(dec.detached());
    let e = tape.constant(enc.detached());
    let w = params.bind(&mut tape);
    let out = cg_fuse_on_tape(&mut tape, d, e, &w, &params.dims)?;
    Ok(tape.value(out).detached())
}
