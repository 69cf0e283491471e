//! Training objectives.
//!
//! Reductions: the two cross-entropies and the re-weighted loss average over
//! the batch; the contrastive and head-center losses sum over their samples.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LOG_FLOOR: f64 = 1e-12;

/// How the contrastive and head-center terms combine their samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    Mean,
}

/// Replaces each row of `g` by the row mean with probability `p_m`. Returns
/// the masked view and which rows were replaced.
pub fn mask_augment(t: &mut Tape, g: Var, p_m: f64, rng: &mut Rng) -> Result<(Var, Vec<bool>)> {
    let m = t.value(g).rows();
    let mask: Vec<bool> = (0..m).map(|_| rng.bernoulli(p_m)).collect();
    if !mask.iter().any(|&b| b) {
        return Ok((g, mask));
    }
    let mean = t.mean_rows(g)?;
    let masked = t.replace_rows(g, mean, &mask)?;
    Ok((masked, mask))
}

/// Positive index for `2m` samples laid out as `[view_a; view_b]`.
pub fn two_view_pairing(m: usize) -> Vec<usize> {
    (0..2 * m).map(|i| (i + m) % (2 * m)).collect()
}

/// `-Σ_i log( exp(q_i·q_j(i)/τ) / Σ_{a≠i} exp(q_i·q_a/τ) )` over the rows of
/// `q` (already unit-norm), with `positives[i] = j(i)`.
pub fn contrastive_loss(t: &mut Tape, q: Var, positives: &[usize], tau: f64) -> Result<Var> {
    let n = t.value(q).rows();
    if positives.len() != n || positives.iter().enumerate().any(|(i, &j)| j == i || j >= n) {
        return shape_err("contrastive_loss", alloc::format!("{n} samples, invalid pairing"));
    }
    let qt = t.transpose(q);
    let sim = t.matmul(q, qt)?;
    let sim = t.scale(sim, 1.0 / tau);
    let log_prob = t.log_softmax_off_diag(sim)?;
    t.pick_sum(log_prob, positives, &vec![-1.0; n])
}

/// Running per-class feature means for the head classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCenters {
    pub centers: Vec<Vec<f64>>,
    pub seen: Vec<bool>,
    pub head: Vec<bool>,
    pub momentum: f64,
}

impl ClassCenters {
    pub fn new(num_classes: usize, dim: usize, head_set: &[usize], momentum: f64) -> Self {
        let mut head = vec![false; num_classes];
        for &k in head_set {
            head[k] = true;
        }
        ClassCenters { centers: vec![vec![0.0; dim]; num_classes], seen: vec![false; num_classes], head, momentum }
    }

    /// Rows of the batch that contribute to the loss: head-class samples
    /// whose center has been initialized.
    pub fn active_rows(&self, labels: &[usize]) -> Vec<usize> {
        (0..labels.len()).filter(|&i| self.head[labels[i]] && self.seen[labels[i]]).collect()
    }

    /// EMA update `C ← μ C + (1 − μ) mean(batch)` for every head class in the batch.
    pub fn update(&mut self, features: &Tensor, labels: &[usize]) {
        let dim = features.cols();
        let mut sums = vec![vec![0.0; dim]; self.centers.len()];
        let mut counts = vec![0usize; self.centers.len()];
        for (i, &y) in labels.iter().enumerate() {
            if !self.head[y] {
                continue;
            }
            counts[y] += 1;
            for (s, v) in sums[y].iter_mut().zip(features.row_slice(i)) {
                *s += v;
            }
        }
        for k in 0..self.centers.len() {
            if counts[k] == 0 {
                continue;
            }
            let mu = self.momentum;
            for (c, s) in self.centers[k].iter_mut().zip(&sums[k]) {
                *c = mu * *c + (1.0 - mu) * s / counts[k] as f64;
            }
            self.seen[k] = true;
        }
    }
}

/// `Σ_{i ∈ D_h} ||r_t_i − C_{y_i}||₂`. Centers enter as constants. Returns
/// `None` when no sample in the batch has an active center.
pub fn head_center_loss(t: &mut Tape, r_t: Var, labels: &[usize], centers: &ClassCenters) -> Result<Option<Var>> {
    let rows = centers.active_rows(labels);
    if rows.is_empty() {
        return Ok(None);
    }
    let feats = t.gather_rows(r_t, &rows)?;
    let target: Vec<&[f64]> = rows.iter().map(|&i| centers.centers[labels[i]].as_slice()).collect();
    let target = t.input(Tensor::from_rows(&target, t.value(r_t).cols())?);
    let diff = t.sub(feats, target)?;
    let norms = t.row_norm(diff);
    Ok(Some(t.sum(norms)))
}

/// `mean_i(−w_{y_i} log p̂_{y_i})` on probabilities, clamped at `1e-12`.
/// Also returns how many target probabilities hit the clamp.
pub fn reweighted_ce(t: &mut Tape, probs: Var, labels: &[usize], weights: &[f64]) -> Result<(Var, usize)> {
    let n = labels.len();
    if n == 0 {
        return shape_err("reweighted_ce", "empty batch".into());
    }
    let clamped = labels.iter().enumerate().filter(|&(i, &y)| t.value(probs).get(i, y) <= LOG_FLOOR).count();
    let logp = t.log_clamped(probs, LOG_FLOOR);
    let w: Vec<f64> = labels.iter().map(|&y| -weights[y] / n as f64).collect();
    Ok((t.pick_sum(logp, labels, &w)?, clamped))
}

/// Mean softmax cross-entropy over the rows of `logits`.
pub fn cross_entropy(t: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let n = labels.len();
    if n == 0 {
        return shape_err("cross_entropy", "empty batch".into());
    }
    let logp = t.log_softmax(logits);
    t.pick_sum(logp, labels, &vec![-1.0 / n as f64; n])
}

/// Scalar values of every loss term for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_con: f64,
    pub l_hc: f64,
    pub l_ssl: f64,
    pub l_rw: f64,
    pub l_hpc: f64,
    pub l_obj: f64,
    pub l_total: f64,
    pub lambda: f64,
    /// Target probabilities clamped before the log in the re-weighted loss.
    pub clamped: usize,
}

impl LossBundle {
    pub fn from_parts(l_con: f64, l_hc: f64, l_rw: f64, l_hpc: f64, l_obj: f64, lambda: f64) -> Self {
        let l_ssl = l_con + lambda * l_hc;
        LossBundle { l_con, l_hc, l_ssl, l_rw, l_hpc, l_obj, l_total: l_ssl + l_rw + l_hpc + l_obj, lambda, clamped: 0 }
    }
}

/// `(L_con + λ L_hc) + L_rw + L_hpc + L_obj` over whichever terms are present.
pub fn total_loss(
    t: &mut Tape,
    con: Option<Var>,
    hc: Option<Var>,
    rw: Option<Var>,
    hpc: Option<Var>,
    obj: Option<Var>,
    lambda: f64,
) -> Result<Var> {
    let hc = hc.map(|v| t.scale(v, lambda));
    let mut total: Option<Var> = None;
    for term in [con, hc, rw, hpc, obj].into_iter().flatten() {
        total = Some(match total {
            None => term,
            Some(acc) => t.add(acc, term)?,
        });
    }
    Ok(total.unwrap_or_else(|| t.constant(0.0)))
}
