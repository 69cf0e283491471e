//! Layers built on the tape. Each layer holds parameter handles only; the
//! values live in a [`ParamStore`].

use alloc::format;
use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::math;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const EMBEDDING_STD: f64 = 0.02;

/// `y = x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Result<Self> {
        let weight = store.add_uniform(&format!("{name}.w"), in_dim, out_dim, rng)?;
        let bias = store.add_filled(&format!("{name}.b"), 1, out_dim, 0.0)?;
        Ok(Linear { weight, bias, in_dim, out_dim })
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = t.param(store, self.weight);
        let b = t.param(store, self.bias);
        let xw = t.matmul(x, w)?;
        t.add_row(xw, b)
    }
}

/// Two linear layers with a ReLU between them.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dims: [usize; 3], rng: &mut Rng) -> Result<Self> {
        Ok(Mlp {
            first: Linear::new(store, &format!("{name}.l1"), dims[0], dims[1], rng)?,
            second: Linear::new(store, &format!("{name}.l2"), dims[1], dims[2], rng)?,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.first.params().to_vec();
        p.extend(self.second.params());
        p
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.first.forward(t, store, x)?;
        let h = t.relu(h);
        self.second.forward(t, store, h)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.add_filled(&format!("{name}.g"), 1, dim, 1.0)?,
            shift: store.add_filled(&format!("{name}.b"), 1, dim, 0.0)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let n = t.layer_norm(x, LAYER_NORM_EPS);
        let g = t.param(store, self.gain);
        let b = t.param(store, self.shift);
        let scaled = t.mul_row(n, g)?;
        t.add_row(scaled, b)
    }
}

/// Lookup table with one row per symbol.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, rows: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        let table = store.add_normal(name, rows, dim, EMBEDDING_STD, rng)?;
        Ok(Embedding { table, rows, dim })
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let table = t.param(store, self.table);
        t.gather_rows(table, ids)
    }
}

/// Scaled dot-product self-attention over the rows of its input.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return shape_err("attention", format!("model dim {dim} not divisible by {heads} heads"));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, rng)?,
            key: Linear::new(store, &format!("{name}.k"), dim, dim, rng)?,
            value: Linear::new(store, &format!("{name}.v"), dim, dim, rng)?,
            output: Linear::new(store, &format!("{name}.o"), dim, dim, rng)?,
            heads,
        })
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let dim = self.query.out_dim;
        let head_dim = dim / self.heads;
        let q = self.query.forward(t, store, x)?;
        let k = self.key.forward(t, store, x)?;
        let v = self.value.forward(t, store, x)?;
        let scale = 1.0 / math::sqrt(head_dim as f64);
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let qh = t.slice_cols(q, lo, hi)?;
            let kh = t.slice_cols(k, lo, hi)?;
            let vh = t.slice_cols(v, lo, hi)?;
            let kt = t.transpose(kh);
            let scores = t.matmul(qh, kt)?;
            let scores = t.scale(scores, scale);
            let attn = t.softmax(scores);
            outs.push(t.matmul(attn, vh)?);
        }
        let joined = t.concat_cols(&outs)?;
        self.output.forward(t, store, joined)
    }
}

/// Post-norm transformer encoder block without positional encoding.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub feed_forward: Mlp,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ff_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(EncoderLayer {
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), dim)?,
            feed_forward: Mlp::new(store, &format!("{name}.ff"), [dim, ff_dim, dim], rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.ln2"), dim)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let a = self.attention.forward(t, store, x)?;
        let h = t.add(x, a)?;
        let h = self.norm1.forward(t, store, h)?;
        let f = self.feed_forward.forward(t, store, h)?;
        let out = t.add(h, f)?;
        self.norm2.forward(t, store, out)
    }
}
