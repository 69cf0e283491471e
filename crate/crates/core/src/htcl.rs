//! The cooperative head: a head-prefer branch and a tail-prefer branch whose
//! normalized predictions are mixed per class by a learnable gate.
//!
//! ```text
//! r ──► HPC ──► z_h ───────────────────────────┐
//! │             │                               ├─► z_o = N(z_h)·σ(c) + N(z_t)·(1 − σ(c))
//! │   s = [emb(c_i), Σ softmax(z_h)_k P_k, emb(c_j)]
//! └──► g = MLP[r, s] ──► TPFE ──► r_t ──► TPC ──► z_t
//! ```
//!
//! `N` is a softmax over classes. The final prediction is `softmax(z_o)`, or
//! `z_o` rescaled to sum to one (see [`crate::model::Mixture`]).

use alloc::format;
use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::data::ClassStats;
use crate::error::Result;
use crate::math;
use crate::model::ModelDims;
use crate::nn::{Embedding, EncoderLayer, Linear, Mlp};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct HtclHead {
    /// Head-prefer classifier.
    pub hpc: Linear,
    /// One word vector per predicate class.
    pub predicate_words: Embedding,
    /// `g = MLP[r, s]`, the token projection in front of the encoder.
    pub fuse: Mlp,
    /// Tail-prefer feature encoder.
    pub tpfe: Vec<EncoderLayer>,
    pub tpfe_out: Linear,
    /// Tail-prefer classifier.
    pub tpc: Linear,
    /// Class gate logits `c`, shape `1 x C`.
    pub gate: ParamId,
    /// Maps tail-prefer features onto the contrastive hypersphere.
    pub projection: Mlp,
}

impl HtclHead {
    pub fn new(store: &mut ParamStore, dims: &ModelDims, rng: &mut Rng) -> Result<Self> {
        let d = dims;
        let tpfe = (0..d.tpfe_layers)
            .map(|i| EncoderLayer::new(store, &format!("tpfe.{i}"), d.model_dim, d.heads, d.ff_dim, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(HtclHead {
            hpc: Linear::new(store, "hpc", d.relation_dim, d.num_predicates, rng)?,
            predicate_words: Embedding::new(store, "emb.pred", d.num_predicates, d.word_dim, rng)?,
            fuse: Mlp::new(store, "fuse", [d.relation_dim + 3 * d.word_dim, d.model_dim, d.model_dim], rng)?,
            tpfe,
            tpfe_out: Linear::new(store, "tpfe.out", d.model_dim, d.relation_dim, rng)?,
            tpc: Linear::new(store, "tpc", d.relation_dim, d.num_predicates, rng)?,
            gate: store.add_filled("gate", 1, d.num_predicates, 0.0)?,
            projection: Mlp::new(store, "proj", [d.relation_dim, d.relation_dim, d.projection_dim], rng)?,
        })
    }

    /// `z_h = W_h r + b_h`.
    pub fn hp_classify(&self, t: &mut Tape, store: &ParamStore, r: Var) -> Result<Var> {
        self.hpc.forward(t, store, r)
    }

    /// `s = [emb(c_i), softmax(z_h) · P, emb(c_j)]` where `P` holds one word
    /// vector per predicate, so the middle segment is the probability-weighted
    /// mean predicate embedding.
    pub fn semantic_rep(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        object_words: &Embedding,
        z_h: Var,
        subj_labels: &[usize],
        obj_labels: &[usize],
    ) -> Result<Var> {
        let probs = t.softmax(z_h);
        let table = t.param(store, self.predicate_words.table);
        let mid = t.matmul(probs, table)?;
        let subj = object_words.forward(t, store, subj_labels)?;
        let obj = object_words.forward(t, store, obj_labels)?;
        t.concat_cols(&[subj, mid, obj])
    }

    /// `g_k = MLP[r_k, s_k]`.
    pub fn fuse(&self, t: &mut Tape, store: &ParamStore, r: Var, s: Var) -> Result<Var> {
        let x = t.concat_cols(&[r, s])?;
        self.fuse.forward(t, store, x)
    }

    /// Re-encodes the relation tokens of one image. Without the encoder
    /// stack the tokens only pass through the output projection.
    pub fn tpfe_forward(&self, t: &mut Tape, store: &ParamStore, tokens: Var, use_encoder: bool) -> Result<Var> {
        let mut h = tokens;
        if use_encoder {
            for layer in &self.tpfe {
                h = layer.forward(t, store, h)?;
            }
        }
        self.tpfe_out.forward(t, store, h)
    }

    /// `z_t = W_t r_t + b_t`.
    pub fn tp_classify(&self, t: &mut Tape, store: &ParamStore, r_t: Var) -> Result<Var> {
        self.tpc.forward(t, store, r_t)
    }

    /// Gate `sigmoid(c)` recorded on the tape.
    pub fn gate_var(&self, t: &mut Tape, store: &ParamStore) -> Var {
        let c = t.param(store, self.gate);
        t.sigmoid(c)
    }

    /// Unit-norm projections `q` of tail-prefer features.
    pub fn project(&self, t: &mut Tape, store: &ParamStore, r_t: Var) -> Result<Var> {
        let p = self.projection.forward(t, store, r_t)?;
        Ok(t.l2_normalize(p))
    }

    pub fn gate_values(&self, store: &ParamStore) -> Vec<f64> {
        store.value(self.gate).data().iter().map(|&c| math::sigmoid(c)).collect()
    }
}

/// `z_o = N(z_h) ⊙ gate + N(z_t) ⊙ (1 − gate)` with `N` a row softmax and
/// `gate` a `1 x C` row in `(0, 1)`.
pub fn cooperate(t: &mut Tape, z_h: Var, z_t: Var, gate: Var) -> Result<Var> {
    let nh = t.softmax(z_h);
    let nt = t.softmax(z_t);
    let head = t.mul_row(nh, gate)?;
    let rest = t.affine(gate, -1.0, 1.0);
    let tail = t.mul_row(nt, rest)?;
    t.add(head, tail)
}

/// Initial gate logits `c_i = ln(max(n_i, 1))`.
pub fn init_gate(stats: &ClassStats) -> Tensor {
    Tensor::row(stats.counts.iter().map(|&n| math::ln(n.max(1) as f64)).collect())
}
