//! Training loop, classifier fine-tuning on a class-balanced feature cache,
//! prediction, and the ablation grid.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::data::{balanced_resample, class_stats, index_by_id, BalancedIndex, ClassStats, Split, SynthSceneGraph};
use crate::error::{Error, Result};
use crate::features::Task;
use crate::htcl::init_gate;
use crate::losses::{
    contrastive_loss, cross_entropy, head_center_loss, mask_augment, reweighted_ce, total_loss, two_view_pairing,
    ClassCenters, LossBundle, Reduction,
};
use crate::metrics::{evaluate, triplets_from_scores, ImagePrediction, MetricsReport};
use crate::model::{all_pairs, BranchMode, ForwardOptions, HtclModel, Mixture, ModelDims};
use crate::optim::Adam;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Images per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    pub beta: f64,
    pub lambda: f64,
    pub tau: f64,
    pub p_m: f64,
    pub h: usize,
    pub tpfe_layers: usize,
    /// Explicit layer sizes; derived from the data when absent.
    pub dims: Option<ModelDims>,
    /// Resamples per class for classifier fine-tuning.
    #[serde(rename = "T")]
    pub resamples: usize,
    pub use_tpfe: bool,
    pub use_tpc_ft: bool,
    pub use_l_ssl: bool,
    pub use_l_con: bool,
    pub use_l_hc: bool,
    pub use_l_hpc: bool,
    /// When off, the cooperative prediction is trained with unweighted
    /// cross-entropy.
    pub use_l_rw: bool,
    pub branch_mode: BranchMode,
    /// Let the cooperative loss reach the head-prefer logits.
    pub head_coop_grad: bool,
    pub mixture: Mixture,
    /// Rescale class weights to sum to `C` before use in the loss.
    pub normalize_weights: bool,
    pub center_momentum: f64,
    /// Learning-rate multiplier for the class gate logits.
    pub gate_lr_scale: f64,
    /// Reduction of the contrastive and head-center terms over a batch.
    pub ssl_reduction: Reduction,
    pub val_fraction: f64,
    pub task: Task,
    pub finetune: FinetuneConfig,
    /// K used for per-epoch validation metrics.
    pub val_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            epochs: 4,
            batch_size: 8,
            lr: 1e-3,
            beta: 0.9999,
            lambda: 1e-4,
            tau: 0.1,
            p_m: 0.1,
            h: 10,
            tpfe_layers: 4,
            dims: None,
            resamples: 5000,
            use_tpfe: true,
            use_tpc_ft: true,
            use_l_ssl: true,
            use_l_con: true,
            use_l_hc: true,
            use_l_hpc: true,
            use_l_rw: true,
            branch_mode: BranchMode::Full,
            head_coop_grad: false,
            mixture: Mixture::Softmax,
            normalize_weights: true,
            center_momentum: 0.9,
            gate_lr_scale: 1.0,
            ssl_reduction: Reduction::Sum,
            val_fraction: 0.1,
            task: Task::PredCls,
            finetune: FinetuneConfig::default(),
            val_k: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: &str| Err(Error::InvalidConfig { field, reason: reason.into() });
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be a non-negative number");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta", "must lie in (0, 1)");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda", "must be non-negative");
        }
        if !(self.tau > 0.0) {
            return bad("tau", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.p_m) {
            return bad("p_m", "must lie in [0, 1]");
        }
        if self.h == 0 {
            return bad("h", "must be positive");
        }
        if self.resamples == 0 {
            return bad("T", "must be positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction", "must lie in [0, 1)");
        }
        if !(self.gate_lr_scale >= 0.0 && self.gate_lr_scale.is_finite()) {
            return bad("gate_lr_scale", "must be a non-negative number");
        }
        if !(0.0..1.0).contains(&self.center_momentum) {
            return bad("center_momentum", "must lie in [0, 1)");
        }
        self.finetune.validate()
    }

    /// Layer sizes for a split with the given metadata.
    pub fn model_dims(&self, split: &Split) -> Result<ModelDims> {
        let m = split.meta;
        let mut dims = self.dims.unwrap_or_else(|| ModelDims::new(m.num_predicates, m.num_object_classes, m.visual_dim));
        if (dims.num_predicates, dims.num_object_classes, dims.visual_dim) != (m.num_predicates, m.num_object_classes, m.visual_dim) {
            return Err(Error::InvalidConfig { field: "dims", reason: "class counts or visual size differ from the data".into() });
        }
        dims.tpfe_layers = self.tpfe_layers;
        dims.validate()?;
        Ok(dims)
    }

    pub fn forward_options(&self) -> ForwardOptions {
        ForwardOptions { task: self.task, mode: self.branch_mode, use_tpfe: self.use_tpfe, head_coop_grad: self.head_coop_grad, mixture: self.mixture }
    }

    fn ssl_active(&self) -> (bool, bool) {
        let tail = self.branch_mode != BranchMode::HpOnly;
        (tail && self.use_l_ssl && self.use_l_con, tail && self.use_l_ssl && self.use_l_hc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Cached samples per optimizer step.
    pub batch_size: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig { epochs: 3, lr: 1e-3, batch_size: 64 }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig { field: "finetune.batch_size", reason: "must be positive".into() });
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig { field: "finetune.lr", reason: "must be a non-negative number".into() });
        }
        Ok(())
    }
}

/// Per-class loss weights and head-class centers used while training.
#[derive(Debug, Clone, PartialEq)]
pub struct LossContext {
    pub weights: Vec<f64>,
    pub centers: ClassCenters,
}

impl LossContext {
    pub fn new(cfg: &TrainConfig, stats: &ClassStats, relation_dim: usize) -> Self {
        let weights = if !cfg.use_l_rw {
            vec![1.0; stats.num_classes()]
        } else if cfg.normalize_weights {
            stats.normalized_weights()
        } else {
            stats.weights.clone()
        };
        LossContext { weights, centers: ClassCenters::new(stats.num_classes(), relation_dim, &stats.head_set, cfg.center_momentum) }
    }
}

/// Tape handles a batch's loss needs beyond the scalar itself.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub total: Var,
    pub bundle: LossBundle,
    /// Tail-prefer features of labelled relations, for the center update.
    pub r_t: Option<Var>,
    pub labels: Vec<usize>,
}

fn stack(t: &mut Tape, parts: &[Var]) -> Result<Option<Var>> {
    match parts.len() {
        0 => Ok(None),
        1 => Ok(Some(parts[0])),
        _ => t.concat_rows(parts).map(Some),
    }
}

/// Rows of `pairs` carrying each annotated relation.
fn relation_rows(scene: &SynthSceneGraph, pairs: &[(usize, usize)]) -> Vec<usize> {
    scene
        .relations
        .iter()
        .map(|r| pairs.iter().position(|&p| p == (r.subj, r.obj)).expect("relation pair among candidates"))
        .collect()
}

/// Records the total training loss of one batch. Centers are read, not
/// updated; `rng` drives the mean-mask augmentation.
pub fn loss_for_batch(
    model: &HtclModel,
    store: &ParamStore,
    t: &mut Tape,
    batch: &[&SynthSceneGraph],
    cfg: &TrainConfig,
    ctx: &LossContext,
    rng: &mut Rng,
) -> Result<BatchLoss> {
    let (use_con, use_hc) = cfg.ssl_active();
    let tail = cfg.branch_mode != BranchMode::HpOnly;
    let mut obj_logits = Vec::new();
    let mut obj_labels = Vec::new();
    let mut zh_rows = Vec::new();
    let mut prob_rows = Vec::new();
    let mut rt_rows = Vec::new();
    let mut labels = Vec::new();
    let mut con_terms = Vec::new();
    let mut anchors = 0usize;
    for scene in batch {
        let n = scene.objects.len();
        if n < 2 {
            let encoded = model.features.object_encode(t, store, scene, cfg.task)?;
            obj_logits.push(model.features.label_head.forward(t, store, encoded)?);
            obj_labels.extend(scene.objects.iter().map(|o| o.class_id));
            continue;
        }
        let pairs = all_pairs(n);
        let f = model.forward(t, store, scene, &pairs, &cfg.forward_options())?;
        obj_logits.push(f.objects.label_logits);
        obj_labels.extend(scene.objects.iter().map(|o| o.class_id));
        if scene.relations.is_empty() {
            continue;
        }
        let rows = relation_rows(scene, &pairs);
        labels.extend(scene.relations.iter().map(|r| r.predicate));
        zh_rows.push(t.gather_rows(f.z_h, &rows)?);
        if !tail {
            continue;
        }
        prob_rows.push(t.gather_rows(f.probs, &rows)?);
        let r_t = f.r_t.expect("tail branch output");
        rt_rows.push(t.gather_rows(r_t, &rows)?);
        if use_con && rows.len() > 1 {
            let tokens = f.tokens.expect("tail branch tokens");
            let (masked, _) = mask_augment(t, tokens, cfg.p_m, rng)?;
            let r_t_masked = model.head.tpfe_forward(t, store, masked, cfg.use_tpfe)?;
            let a = t.gather_rows(r_t, &rows)?;
            let b = t.gather_rows(r_t_masked, &rows)?;
            let both = t.concat_rows(&[a, b])?;
            let q = model.head.project(t, store, both)?;
            con_terms.push(contrastive_loss(t, q, &two_view_pairing(rows.len()), cfg.tau)?);
            anchors += 2 * rows.len();
        }
    }
    let obj_logits = stack(t, &obj_logits)?;
    let l_obj = match obj_logits {
        Some(z) if !obj_labels.is_empty() => Some(cross_entropy(t, z, &obj_labels)?),
        _ => None,
    };
    let z_h = stack(t, &zh_rows)?;
    let l_hpc = match z_h {
        Some(z) if cfg.use_l_hpc || cfg.branch_mode == BranchMode::HpOnly => Some(cross_entropy(t, z, &labels)?),
        _ => None,
    };
    let mut clamped = 0;
    let l_rw = match stack(t, &prob_rows)? {
        Some(p) => {
            let (l, c) = reweighted_ce(t, p, &labels, &ctx.weights)?;
            clamped = c;
            Some(l)
        }
        None => None,
    };
    let r_t = stack(t, &rt_rows)?;
    let mut l_hc = match r_t {
        Some(r) if use_hc => head_center_loss(t, r, &labels, &ctx.centers)?,
        _ => None,
    };
    let mut l_con = con_terms.iter().copied().reduce(|a, b| t.add(a, b).expect("scalar add"));
    if cfg.ssl_reduction == Reduction::Mean {
        l_con = l_con.map(|v| t.scale(v, 1.0 / anchors as f64));
        if let Some(v) = l_hc {
            let active = ctx.centers.active_rows(&labels).len();
            l_hc = Some(t.scale(v, 1.0 / active as f64));
        }
    }
    let total = total_loss(t, l_con, l_hc, l_rw, l_hpc, l_obj, cfg.lambda)?;
    let val = |v: Option<Var>| v.map(|v| t.value(v).item()).unwrap_or(0.0);
    let mut bundle = LossBundle::from_parts(val(l_con), val(l_hc), val(l_rw), val(l_hpc), val(l_obj), cfg.lambda);
    bundle.l_total = t.value(total).item();
    bundle.clamped = clamped;
    Ok(BatchLoss { total, bundle, r_t, labels })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: u64,
    pub loss: LossBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_recall: f64,
    pub val_mean_recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainStatus {
    Completed,
    /// A non-finite loss or gradient stopped training; the store holds the
    /// last finite parameters.
    Diverged { epoch: usize, step: u64 },
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: HtclModel,
    pub store: ParamStore,
    pub stats: ClassStats,
    pub context: LossContext,
    pub curve: Vec<StepLoss>,
    pub epochs: Vec<EpochLog>,
    pub status: TrainStatus,
}

/// Splits off the validation images, trains for `cfg.epochs` and logs every
/// step's losses and every epoch's validation recall.
pub fn train(cfg: &TrainConfig, data: &Split) -> Result<TrainOutput> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let (train_split, val_split) = data.hold_out(cfg.val_fraction, root.substream(10).next_u64());
    let dims = cfg.model_dims(data)?;
    let (model, mut store) = HtclModel::new(dims, root.substream(11).next_u64())?;
    let stats = class_stats(&train_split, cfg.beta, cfg.h.min(dims.num_predicates))?;
    store.set("gate", init_gate(&stats))?;
    let mut ctx = LossContext::new(cfg, &stats, dims.relation_dim);
    let mut adam = Adam::new(&store);
    let gate = [model.head.gate];
    let rest: Vec<ParamId> = store.ids().filter(|&id| id != model.head.gate).collect();
    let mut order_rng = root.substream(12);
    let mut mask_rng = root.substream(13);
    let mut curve = Vec::new();
    let mut epochs = Vec::new();
    let mut status = TrainStatus::Completed;
    let mut order: Vec<usize> = (0..train_split.images.len()).collect();
    'outer: for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SynthSceneGraph> = chunk.iter().map(|&i| &train_split.images[i]).collect();
            let mut t = Tape::new();
            let out = loss_for_batch(&model, &store, &mut t, &batch, cfg, &ctx, &mut mask_rng)?;
            store.zero_grads();
            let finite = out.bundle.l_total.is_finite() && {
                t.backward(out.total, &mut store)?;
                store.ids().all(|id| store.grad(id).is_finite())
            };
            if !finite {
                store.zero_grads();
                status = TrainStatus::Diverged { epoch, step: store.step() };
                break 'outer;
            }
            adam.step_groups(&mut store, &[(&rest, cfg.lr), (&gate, cfg.lr * cfg.gate_lr_scale)]);
            if let Some(r) = out.r_t {
                ctx.centers.update(t.value(r), &out.labels);
            }
            curve.push(StepLoss { step: store.step(), loss: out.bundle });
            sum += out.bundle.l_total;
            batches += 1;
        }
        let (val_recall, val_mean_recall) = if val_split.images.is_empty() {
            (0.0, 0.0)
        } else {
            let report = evaluate_model(&model, &store, &val_split, cfg, &[cfg.val_k], true)?;
            let m = &report.by_k[0];
            (m.recall, m.mean_recall)
        };
        epochs.push(EpochLog { epoch, mean_loss: if batches > 0 { sum / batches as f64 } else { 0.0 }, val_recall, val_mean_recall });
    }
    Ok(TrainOutput { model, store, stats, context: ctx, curve, epochs, status })
}

/// Mean batch loss over a split without updating anything.
pub fn dataset_loss(model: &HtclModel, store: &ParamStore, split: &Split, cfg: &TrainConfig, ctx: &LossContext) -> Result<f64> {
    let mut rng = Rng::new(cfg.seed).substream(14);
    let mut sum = 0.0;
    let mut n = 0usize;
    for chunk in split.images.chunks(cfg.batch_size) {
        let batch: Vec<&SynthSceneGraph> = chunk.iter().collect();
        let mut t = Tape::new();
        sum += loss_for_batch(model, store, &mut t, &batch, cfg, ctx, &mut rng)?.bundle.l_total;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Scores every ordered object pair of every image.
pub fn predict(model: &HtclModel, store: &ParamStore, split: &Split, opts: &ForwardOptions) -> Result<Vec<ImagePrediction>> {
    let task = opts.task;
    let mut out = Vec::with_capacity(split.images.len());
    for scene in &split.images {
        let pairs = all_pairs(scene.objects.len());
        let mut t = Tape::new();
        if pairs.is_empty() {
            let encoded = model.features.object_encode(&mut t, store, scene, task)?;
            let objects = model.features.context_encode(&mut t, store, scene, encoded, task)?;
            out.push(ImagePrediction { image_id: scene.image_id, triplets: Vec::new(), labels: Some(objects.labels) });
            continue;
        }
        let f = model.forward(&mut t, store, scene, &pairs, opts)?;
        out.push(ImagePrediction {
            image_id: scene.image_id,
            triplets: triplets_from_scores(&pairs, t.value(f.probs)),
            labels: Some(f.objects.labels),
        });
    }
    Ok(out)
}

pub fn evaluate_model(
    model: &HtclModel,
    store: &ParamStore,
    split: &Split,
    cfg: &TrainConfig,
    ks: &[usize],
    graph_constraint: bool,
) -> Result<MetricsReport> {
    let preds = predict(model, store, split, &cfg.forward_options())?;
    evaluate(&preds, split, ks, graph_constraint, cfg.task)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classifier {
    Hpc,
    Tpc,
}

/// Frozen classifier inputs for balanced fine-tuning. `features` holds one
/// row per distinct relation; `rows` lists the resampled sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub which: Classifier,
    pub features: Tensor,
    pub feature_labels: Vec<usize>,
    pub rows: Vec<usize>,
}

impl FeatureCache {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.rows.iter().map(|&r| self.feature_labels[r]).collect()
    }
}

fn check_classifier(which: Classifier, mode: BranchMode) -> Result<()> {
    if which == Classifier::Tpc && mode == BranchMode::HpOnly {
        return Err(Error::InvalidConfig { field: "branch_mode", reason: "no tail-prefer classifier in hp_only mode".into() });
    }
    Ok(())
}

/// Extracts `r` (for the head-prefer classifier) or `r_t` (for the
/// tail-prefer one) of every relation referenced by `index`.
pub fn build_feature_cache(
    model: &HtclModel,
    store: &ParamStore,
    split: &Split,
    index: &BalancedIndex,
    which: Classifier,
    cfg: &TrainConfig,
) -> Result<FeatureCache> {
    check_classifier(which, cfg.branch_mode)?;
    let by_id = index_by_id(split);
    let mut refs: Vec<_> = index.order.clone();
    refs.sort_unstable();
    refs.dedup();
    let dim = model.dims.relation_dim;
    let mut data = Vec::with_capacity(refs.len() * dim);
    let mut feature_labels = Vec::with_capacity(refs.len());
    let mut i = 0;
    while i < refs.len() {
        let image_id = refs[i].image_id;
        let scene = by_id
            .get(&image_id)
            .map(|&k| &split.images[k])
            .ok_or_else(|| Error::Mismatch(format!("index refers to unknown image {image_id}")))?;
        let pairs = all_pairs(scene.objects.len());
        let mut t = Tape::new();
        let f = model.forward(&mut t, store, scene, &pairs, &cfg.forward_options())?;
        let source = match which {
            Classifier::Hpc => f.r,
            Classifier::Tpc => f.r_t.expect("tail branch output"),
        };
        let rows = relation_rows(scene, &pairs);
        while i < refs.len() && refs[i].image_id == image_id {
            let rel = refs[i].relation;
            data.extend_from_slice(t.value(source).row_slice(rows[rel]));
            feature_labels.push(scene.relations[rel].predicate);
            i += 1;
        }
    }
    let rows = index.order.iter().map(|r| refs.binary_search(r).expect("deduplicated reference")).collect();
    Ok(FeatureCache { which, features: Tensor::matrix(feature_labels.len(), dim, data)?, feature_labels, rows })
}

/// Re-fits one linear classifier with plain cross-entropy on the cached
/// features. Every other parameter is left untouched.
pub fn finetune_classifier(
    model: &HtclModel,
    store: &ParamStore,
    mode: BranchMode,
    cache: &FeatureCache,
    ft: &FinetuneConfig,
    seed: u64,
) -> Result<ParamStore> {
    check_classifier(cache.which, mode)?;
    ft.validate()?;
    let mut store = store.clone();
    let layer = match cache.which {
        Classifier::Hpc => &model.head.hpc,
        Classifier::Tpc => &model.head.tpc,
    };
    let ids: Vec<ParamId> = layer.params().to_vec();
    let mut adam = Adam::new(&store);
    let mut rng = Rng::new(seed);
    let mut order = cache.rows.clone();
    let dim = cache.features.cols();
    for _ in 0..ft.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(ft.batch_size) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&r| cache.features.row_slice(r)).collect();
            let labels: Vec<usize> = chunk.iter().map(|&r| cache.feature_labels[r]).collect();
            let mut t = Tape::new();
            let x = t.input(Tensor::from_rows(&rows, dim)?);
            let z = layer.forward(&mut t, &store, x)?;
            let loss = cross_entropy(&mut t, z, &labels)?;
            store.zero_grads();
            t.backward(loss, &mut store)?;
            adam.step_params(&mut store, ft.lr, &ids);
        }
    }
    Ok(store)
}

/// Accuracy of one classifier on cached features.
pub fn cache_accuracy(model: &HtclModel, store: &ParamStore, cache: &FeatureCache) -> Result<f64> {
    if cache.feature_labels.is_empty() {
        return Ok(0.0);
    }
    let layer = match cache.which {
        Classifier::Hpc => &model.head.hpc,
        Classifier::Tpc => &model.head.tpc,
    };
    let mut t = Tape::new();
    let x = t.input(cache.features.clone());
    let z = layer.forward(&mut t, store, x)?;
    let pred = t.value(z).argmax_rows();
    let hits = pred.iter().zip(&cache.feature_labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Trains and, when the config asks for it, fine-tunes the tail-prefer
/// classifier. Returns the trained run and the store used for evaluation.
pub fn train_and_finetune(cfg: &TrainConfig, data: &Split) -> Result<(TrainOutput, ParamStore)> {
    let run = train(cfg, data)?;
    let store = if cfg.use_tpc_ft && cfg.branch_mode != BranchMode::HpOnly {
        finetune(&run, cfg, data, Classifier::Tpc)?
    } else {
        run.store.clone()
    };
    Ok((run, store))
}

/// Balanced fine-tuning of one classifier of a finished run.
pub fn finetune(run: &TrainOutput, cfg: &TrainConfig, data: &Split, which: Classifier) -> Result<ParamStore> {
    finetune_store(&run.model, &run.store, cfg, data, which)
}

/// Builds the balanced index and feature cache for `store`, then fine-tunes
/// `which`. Seeds derive from `cfg.seed`.
pub fn finetune_store(model: &HtclModel, store: &ParamStore, cfg: &TrainConfig, data: &Split, which: Classifier) -> Result<ParamStore> {
    let root = Rng::new(cfg.seed);
    let index = balanced_resample(data, cfg.resamples, root.substream(20).next_u64())?;
    let cache = build_feature_cache(model, store, data, &index, which, cfg)?;
    finetune_classifier(model, store, cfg.branch_mode, &cache, &cfg.finetune, root.substream(21).next_u64())
}

/// Rows of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    HpBranch,
    HpcFt,
    TpfrBranch,
    WithoutTpfe,
    WithoutTpcFt,
    Htcl,
    WithoutLSsl,
    WithoutLCon,
    WithoutLHc,
    WithoutLHpc,
    WithoutLRw,
}

impl Variant {
    pub const ALL: [Variant; 11] = [
        Variant::HpBranch,
        Variant::HpcFt,
        Variant::TpfrBranch,
        Variant::WithoutTpfe,
        Variant::WithoutTpcFt,
        Variant::Htcl,
        Variant::WithoutLSsl,
        Variant::WithoutLCon,
        Variant::WithoutLHc,
        Variant::WithoutLHpc,
        Variant::WithoutLRw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::HpBranch => "HP-Branch",
            Variant::HpcFt => "HPC-ft",
            Variant::TpfrBranch => "TPFR-Branch",
            Variant::WithoutTpfe => "w/o TPFE",
            Variant::WithoutTpcFt => "w/o TPC-ft",
            Variant::Htcl => "HTCL",
            Variant::WithoutLSsl => "w/o L_SSL",
            Variant::WithoutLCon => "w/o L_Con",
            Variant::WithoutLHc => "w/o L_HC",
            Variant::WithoutLHpc => "w/o L_HPC",
            Variant::WithoutLRw => "w/o L_RW",
        }
    }

    pub fn from_name(name: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == name)
    }

    /// Training settings for this row; fine-tuning is not part of training
    /// so rows differing only in fine-tuning share a run.
    pub fn train_config(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        c.use_tpc_ft = false;
        match self {
            Variant::HpBranch | Variant::HpcFt => c.branch_mode = BranchMode::HpOnly,
            Variant::TpfrBranch => c.branch_mode = BranchMode::TpfrOnly,
            Variant::WithoutTpfe => c.use_tpfe = false,
            Variant::WithoutTpcFt | Variant::Htcl => {}
            Variant::WithoutLSsl => c.use_l_ssl = false,
            Variant::WithoutLCon => c.use_l_con = false,
            Variant::WithoutLHc => c.use_l_hc = false,
            Variant::WithoutLHpc => c.use_l_hpc = false,
            Variant::WithoutLRw => c.use_l_rw = false,
        }
        c
    }

    pub fn finetuned(self) -> Option<Classifier> {
        match self {
            Variant::HpBranch | Variant::WithoutTpcFt => None,
            Variant::HpcFt => Some(Classifier::Hpc),
            _ => Some(Classifier::Tpc),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: MetricsReport,
    pub status: TrainStatus,
}

/// A trained run together with the parameters each fine-tuning produced.
#[derive(Debug, Clone)]
pub struct VariantRun {
    pub variant: Variant,
    pub config: TrainConfig,
    pub run: TrainOutput,
    pub store: ParamStore,
}

/// Trains (and fine-tunes) every requested variant, reusing training runs
/// between rows whose training settings coincide.
pub fn run_variants(base: &TrainConfig, train_split: &Split, variants: &[Variant]) -> Result<Vec<VariantRun>> {
    let mut runs: Vec<(TrainConfig, TrainOutput)> = Vec::new();
    let mut out = Vec::with_capacity(variants.len());
    for &v in variants {
        let cfg = v.train_config(base);
        let run = match runs.iter().find(|(c, _)| *c == cfg) {
            Some((_, r)) => r.clone(),
            None => {
                let r = train(&cfg, train_split)?;
                runs.push((cfg.clone(), r.clone()));
                r
            }
        };
        let store = match v.finetuned() {
            Some(which) => finetune(&run, &cfg, train_split, which)?,
            None => run.store.clone(),
        };
        out.push(VariantRun { variant: v, config: cfg, run, store });
    }
    Ok(out)
}

pub fn run_ablation(
    base: &TrainConfig,
    train_split: &Split,
    test_split: &Split,
    variants: &[Variant],
    ks: &[usize],
    graph_constraint: bool,
) -> Result<Vec<AblationRow>> {
    run_variants(base, train_split, variants)?
        .into_iter()
        .map(|r| {
            let report = evaluate_model(&r.run.model, &r.store, test_split, &r.config, ks, graph_constraint)?;
            Ok(AblationRow { variant: r.variant, report, status: r.run.status })
        })
        .collect()
}

/// Human-readable name of a branch mode.
pub fn mode_name(mode: BranchMode) -> String {
    String::from(match mode {
        BranchMode::HpOnly => "hp_only",
        BranchMode::TpfrOnly => "tpfr_only",
        BranchMode::Full => "full",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GenConfig};

    fn tiny() -> (Split, TrainConfig) {
        let g = GenConfig { num_images: 40, test_images: Some(0), num_predicates: 5, num_object_classes: 3, visual_dim: 4, ..GenConfig::default() };
        let data = generate(&g).unwrap().train;
        let cfg = TrainConfig {
            epochs: 2,
            tpfe_layers: 1,
            h: 2,
            resamples: 10,
            dims: Some(ModelDims::small(5, 3, 4)),
            lr: 1e-2,
            ..TrainConfig::default()
        };
        (data, cfg)
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let (data, mut cfg) = tiny();
        cfg.epochs = 0;
        let out = train(&cfg, &data).unwrap();
        let dims = cfg.model_dims(&data).unwrap();
        let (_, mut init) = HtclModel::new(dims, Rng::new(cfg.seed).substream(11).next_u64()).unwrap();
        init.set("gate", init_gate(&out.stats)).unwrap();
        assert!(out.store.diff_names(&init).is_empty());
        assert!(out.curve.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let (data, cfg) = tiny();
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert!(a.store.diff_names(&b.store).is_empty());
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.status, TrainStatus::Completed);
        assert_eq!(a.epochs.len(), 2);
        let (kept, _) = data.hold_out(cfg.val_fraction, Rng::new(cfg.seed).substream(10).next_u64());
        let dims = cfg.model_dims(&data).unwrap();
        let (model, mut init) = HtclModel::new(dims, Rng::new(cfg.seed).substream(11).next_u64()).unwrap();
        init.set("gate", init_gate(&a.stats)).unwrap();
        let ctx = LossContext::new(&cfg, &a.stats, dims.relation_dim);
        let before = dataset_loss(&model, &init, &kept, &cfg, &ctx).unwrap();
        let after = dataset_loss(&model, &a.store, &kept, &cfg, &ctx).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn finetune_freezes_everything_but_the_classifier() {
        let (data, cfg) = tiny();
        let run = train(&cfg, &data).unwrap();
        let index = balanced_resample(&data, cfg.resamples, 3).unwrap();
        for which in [Classifier::Hpc, Classifier::Tpc] {
            let cache = build_feature_cache(&run.model, &run.store, &data, &index, which, &cfg).unwrap();
            assert_eq!(cache.len(), index.order.len());
            let tuned = finetune_classifier(&run.model, &run.store, cfg.branch_mode, &cache, &cfg.finetune, 1).unwrap();
            let prefix = if which == Classifier::Hpc { "hpc." } else { "tpc." };
            let changed = run.store.diff_names(&tuned);
            assert!(!changed.is_empty());
            assert!(changed.iter().all(|n| n.starts_with(prefix)), "{changed:?}");
            let frozen = FinetuneConfig { lr: 0.0, ..cfg.finetune.clone() };
            let same = finetune_classifier(&run.model, &run.store, cfg.branch_mode, &cache, &frozen, 1).unwrap();
            assert!(run.store.diff_names(&same).is_empty());
        }
        let index = balanced_resample(&data, 4, 3).unwrap();
        let hp = TrainConfig { branch_mode: BranchMode::HpOnly, ..cfg.clone() };
        assert!(build_feature_cache(&run.model, &run.store, &data, &index, Classifier::Tpc, &hp).is_err());
    }

    #[test]
    fn variants_enumerate_eleven_rows() {
        assert_eq!(Variant::ALL.len(), 11);
        for v in Variant::ALL {
            assert_eq!(Variant::from_name(v.name()), Some(v));
        }
        let base = TrainConfig::default();
        assert_eq!(Variant::HpBranch.train_config(&base), Variant::HpcFt.train_config(&base));
        assert_eq!(Variant::Htcl.train_config(&base), Variant::WithoutTpcFt.train_config(&base));
        assert_ne!(Variant::Htcl.train_config(&base), Variant::WithoutLRw.train_config(&base));
    }
}
