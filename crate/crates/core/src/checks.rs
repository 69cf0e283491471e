//! A fixed battery of gradient checks: every layer type, every loss term and
//! the composed training loss on a two-image toy batch.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::data::{generate, stats_from_counts, GenConfig, SynthSceneGraph};
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use crate::htcl::{cooperate, init_gate};
use crate::losses::{contrastive_loss, cross_entropy, head_center_loss, reweighted_ce, two_view_pairing, ClassCenters, Reduction};
use crate::model::{HtclModel, Mixture, ModelDims};
use crate::nn::{Embedding, EncoderLayer, LayerNorm, Linear, Mlp, MultiHeadAttention};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{loss_for_batch, LossContext, TrainConfig};

#[derive(Debug, Clone)]
pub struct CheckCase {
    pub name: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Names of the cases [`run_case`] understands, in suite order.
pub const CASES: [&str; 15] = [
    "linear",
    "mlp",
    "layer_norm",
    "embedding",
    "attention",
    "encoder_layer",
    "contrastive",
    "head_center",
    "reweighted_ce",
    "cross_entropy",
    "cooperate",
    "total_loss",
    "total_loss_sgcls_mean",
    "total_loss_renormalized",
    "total_loss_detached",
];

/// Parameters the detached cooperative mixture still reaches; everything
/// upstream of `z_h` only sees its own losses through this path.
const DOWNSTREAM_OF_DETACH: [&str; 6] = ["gate", "tpc.", "tpfe.", "fuse.", "proj.", "emb.pred"];

fn normal(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).expect("shape")
}

/// Contracts `y` with fixed random weights so every output entry matters.
fn readout(t: &mut Tape, y: Var, w: &Tensor) -> Result<Var> {
    let w = t.input(w.clone());
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn check<F>(store: &mut ParamStore, cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    grad_check(store, f, cfg, None)
}

fn layer_case(name: &str, seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let (m, d) = (3, 4);
    match name {
        "linear" => {
            let lin = Linear::new(&mut store, "lin", d, 3, &mut rng)?;
            store.set("lin.b", normal(&mut rng, 1, 3))?;
            let x = normal(&mut rng, m, d);
            let w = normal(&mut rng, m, 3);
            check(&mut store, cfg, |t, s| {
                let x = t.input(x.clone());
                let y = lin.forward(t, s, x)?;
                readout(t, y, &w)
            })
        }
        "mlp" => {
            let mlp = Mlp::new(&mut store, "mlp", [d, 5, 3], &mut rng)?;
            store.set("mlp.l1.b", normal(&mut rng, 1, 5))?;
            let x = normal(&mut rng, m, d);
            let w = normal(&mut rng, m, 3);
            check(&mut store, cfg, |t, s| {
                let x = t.input(x.clone());
                let y = mlp.forward(t, s, x)?;
                readout(t, y, &w)
            })
        }
        "layer_norm" => {
            let ln = LayerNorm::new(&mut store, "ln", d)?;
            let x = store.add("x", normal(&mut rng, m, d))?;
            store.set("ln.g", normal(&mut rng, 1, d))?;
            let w = normal(&mut rng, m, d);
            check(&mut store, cfg, |t, s| {
                let x = t.param(s, x);
                let y = ln.forward(t, s, x)?;
                readout(t, y, &w)
            })
        }
        "embedding" => {
            let emb = Embedding::new(&mut store, "emb", 5, d, &mut rng)?;
            let ids = [1, 4, 1, 0];
            let w = normal(&mut rng, ids.len(), d);
            check(&mut store, cfg, |t, s| {
                let y = emb.forward(t, s, &ids)?;
                readout(t, y, &w)
            })
        }
        "attention" => {
            let attn = MultiHeadAttention::new(&mut store, "attn", d, 2, &mut rng)?;
            let x = store.add("x", normal(&mut rng, m, d))?;
            let w = normal(&mut rng, m, d);
            check(&mut store, cfg, |t, s| {
                let x = t.param(s, x);
                let y = attn.forward(t, s, x)?;
                readout(t, y, &w)
            })
        }
        "encoder_layer" => {
            let layer = EncoderLayer::new(&mut store, "enc", d, 2, 6, &mut rng)?;
            let x = store.add("x", normal(&mut rng, m, d))?;
            let w = normal(&mut rng, m, d);
            check(&mut store, cfg, |t, s| {
                let x = t.param(s, x);
                let y = layer.forward(t, s, x)?;
                readout(t, y, &w)
            })
        }
        _ => unreachable!("layer case {name}"),
    }
}

fn loss_case(name: &str, seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let c = 4;
    match name {
        "contrastive" => {
            let x = store.add("x", normal(&mut rng, 6, 3))?;
            let positives = two_view_pairing(3);
            check(&mut store, cfg, |t, s| {
                let x = t.param(s, x);
                let q = t.l2_normalize(x);
                contrastive_loss(t, q, &positives, 0.1)
            })
        }
        "head_center" => {
            let x = store.add("x", normal(&mut rng, 5, 3))?;
            let labels = [0, 1, 2, 0, 1];
            let mut centers = ClassCenters::new(c, 3, &[0, 1], 0.9);
            centers.update(&normal(&mut rng, 5, 3), &labels);
            check(&mut store, cfg, |t, s| {
                let x = t.param(s, x);
                Ok(head_center_loss(t, x, &labels, &centers)?.expect("active rows"))
            })
        }
        "reweighted_ce" => {
            let z = store.add("z", normal(&mut rng, 5, c))?;
            let labels = [0, 3, 1, 0, 2];
            let weights = [0.2, 1.1, 1.3, 1.4];
            check(&mut store, cfg, |t, s| {
                let z = t.param(s, z);
                let p = t.softmax(z);
                Ok(reweighted_ce(t, p, &labels, &weights)?.0)
            })
        }
        "cross_entropy" => {
            let z = store.add("z", normal(&mut rng, 5, c))?;
            let labels = [0, 3, 1, 0, 2];
            check(&mut store, cfg, |t, s| {
                let z = t.param(s, z);
                cross_entropy(t, z, &labels)
            })
        }
        "cooperate" => {
            let zh = store.add("z_h", normal(&mut rng, 3, c))?;
            let zt = store.add("z_t", normal(&mut rng, 3, c))?;
            let gate = store.add("gate", normal(&mut rng, 1, c))?;
            let labels = [2, 0, 3];
            check(&mut store, cfg, |t, s| {
                let zh = t.param(s, zh);
                let zt = t.param(s, zt);
                let c = t.param(s, gate);
                let g = t.sigmoid(c);
                let z_o = cooperate(t, zh, zt, g)?;
                let p = t.softmax(z_o);
                Ok(reweighted_ce(t, p, &labels, &[1.0, 0.5, 2.0, 0.5])?.0)
            })
        }
        _ => unreachable!("loss case {name}"),
    }
}

/// Toy scenes where every image has at least two labelled relations, so all
/// loss terms are active.
fn toy_batch(seed: u64) -> Result<(Vec<SynthSceneGraph>, GenConfig)> {
    let gen = GenConfig {
        num_images: 12,
        test_images: Some(0),
        num_predicates: 5,
        num_object_classes: 3,
        visual_dim: 4,
        min_objects: 3,
        max_objects: 3,
        max_relations: 3,
        seed,
        ..GenConfig::default()
    };
    let data = generate(&gen)?;
    let mut scenes: Vec<SynthSceneGraph> = data.train.images.into_iter().filter(|s| s.relations.len() >= 2).collect();
    scenes.truncate(2);
    Ok((scenes, gen))
}

fn total_case(name: &str, seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (scenes, gen) = toy_batch(seed)?;
    // Finite differences see every path, so the full graph is checked with
    // the mixture coupled to `z_h`.
    let mut tc = TrainConfig { h: 2, p_m: 0.5, head_coop_grad: true, ..TrainConfig::default() };
    match name {
        "total_loss" => {}
        "total_loss_sgcls_mean" => {
            tc.task = crate::features::Task::SgCls;
            tc.ssl_reduction = Reduction::Mean;
        }
        "total_loss_renormalized" => tc.mixture = Mixture::Renormalize,
        "total_loss_detached" => tc.head_coop_grad = false,
        _ => unreachable!("total case {name}"),
    }
    let dims = ModelDims::small(gen.num_predicates, gen.num_object_classes, gen.visual_dim);
    let (model, mut store) = HtclModel::new(dims, seed)?;
    let stats = stats_from_counts(vec![9, 5, 3, 2, 1], tc.beta, tc.h)?;
    store.set("gate", init_gate(&stats))?;
    // Larger weights than the default init keep the loss away from flat regions.
    let mut rng = Rng::new(seed ^ 0x5eed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.name(id).ends_with(".w") {
            let v = store.value_mut(id);
            for x in v.data_mut() {
                *x *= 2.0 + rng.uniform();
            }
        }
    }
    let mut ctx = LossContext::new(&tc, &stats, dims.relation_dim);
    let labels: Vec<usize> = (0..ctx.centers.centers.len()).collect();
    ctx.centers.update(&normal(&mut rng, labels.len(), dims.relation_dim), &labels);
    let batch: Vec<&SynthSceneGraph> = scenes.iter().collect();
    let only: Option<Vec<ParamId>> = (!tc.head_coop_grad).then(|| {
        store.ids().filter(|&id| DOWNSTREAM_OF_DETACH.iter().any(|p| store.name(id).starts_with(p))).collect()
    });
    let f = |t: &mut Tape, s: &ParamStore| {
        let mut mask_rng = Rng::new(seed);
        Ok(loss_for_batch(&model, s, t, &batch, &tc, &ctx, &mut mask_rng)?.total)
    };
    grad_check(&mut store, f, cfg, only.as_deref())
}

/// Runs one named case at one seed.
pub fn run_case(name: &str, seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let cfg = GradCheckConfig { seed, ..cfg.clone() };
    match name {
        "linear" | "mlp" | "layer_norm" | "embedding" | "attention" | "encoder_layer" => layer_case(name, seed, &cfg),
        "contrastive" | "head_center" | "reweighted_ce" | "cross_entropy" | "cooperate" => loss_case(name, seed, &cfg),
        _ if name.starts_with("total_loss") && CASES.contains(&name) => total_case(name, seed, &cfg),
        _ => Err(crate::error::Error::InvalidConfig { field: "case", reason: name.to_string() }),
    }
}

/// Every case at every seed in `seeds`.
pub fn run_suite(seeds: &[u64], cfg: &GradCheckConfig) -> Result<Vec<CheckCase>> {
    let mut out = Vec::new();
    for &seed in seeds {
        for name in CASES {
            out.push(CheckCase { name: name.to_string(), seed, report: run_case(name, seed, cfg)? });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes_at_one_seed() {
        for case in run_suite(&[1], &GradCheckConfig::default()).unwrap() {
            assert!(case.report.passed(), "{} {:?}", case.name, case.report.failing);
            assert!(case.report.checked > 0, "{}", case.name);
        }
    }

    #[test]
    fn toy_batch_activates_every_term() {
        let (scenes, _) = toy_batch(3).unwrap();
        assert_eq!(scenes.len(), 2);
    }

    #[test]
    fn unknown_case_is_an_error() {
        assert!(run_case("nope", 0, &GradCheckConfig::default()).is_err());
    }
}
