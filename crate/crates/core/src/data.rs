//! Synthetic long-tailed scene graphs.
//!
//! Predicate labels follow a Zipf law over `C` classes, so class `k` is the
//! `k`-th most frequent predicate in expectation. Each predicate owns a
//! latent prototype; a relation's union feature carries that prototype plus
//! Gaussian noise on top of its subject and object visuals. The second half
//! of the classes (the rare ones) have prototypes correlated with a frequent
//! "parent" class, which reproduces the coarse/fine predicate ambiguity that
//! makes a classifier trained on skewed data favour frequent classes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class_id: usize,
    /// `[x1, y1, x2, y2]`, normalized to `[0, 1]`.
    pub bbox: [f64; 4],
    pub visual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub subj: usize,
    pub obj: usize,
    pub predicate: usize,
    /// Union-region feature emitted by the generator. When absent the union
    /// is the sum of the subject and object visuals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub union: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSceneGraph {
    pub image_id: u64,
    pub objects: Vec<SceneObject>,
    pub relations: Vec<Relation>,
}

impl SynthSceneGraph {
    /// Union feature for an ordered pair; falls back to `v_i + v_j` for pairs
    /// without an annotated relation.
    pub fn union_feature(&self, subj: usize, obj: usize) -> Vec<f64> {
        if let Some(u) = self
            .relations
            .iter()
            .find(|r| r.subj == subj && r.obj == obj)
            .and_then(|r| r.union.as_ref())
        {
            return u.clone();
        }
        self.objects[subj].visual.iter().zip(&self.objects[obj].visual).map(|(a, b)| a + b).collect()
    }

    /// Checks every dataset invariant against the split's metadata.
    pub fn validate(&self, meta: &SplitMeta) -> Result<()> {
        let fail = |path: alloc::string::String, reason: &str| Error::InvalidScene {
            image_id: self.image_id,
            path,
            reason: reason.to_string(),
        };
        if self.objects.is_empty() {
            return Err(fail("objects".into(), "an image needs at least one object"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.class_id >= meta.num_object_classes {
                return Err(fail(format!("objects[{i}].class_id"), "class id out of range"));
            }
            let [x1, y1, x2, y2] = o.bbox;
            if !o.bbox.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
                return Err(fail(format!("objects[{i}].bbox"), "coordinates must lie in [0, 1]"));
            }
            if !(x1 < x2) {
                return Err(fail(format!("objects[{i}].bbox"), "x1 must be less than x2"));
            }
            if !(y1 < y2) {
                return Err(fail(format!("objects[{i}].bbox"), "y1 must be less than y2"));
            }
            if o.visual.len() != meta.visual_dim {
                return Err(fail(format!("objects[{i}].visual"), "length differs from d_v"));
            }
            if !o.visual.iter().all(|v| v.is_finite()) {
                return Err(fail(format!("objects[{i}].visual"), "non-finite value"));
            }
        }
        let n = self.objects.len();
        for (k, r) in self.relations.iter().enumerate() {
            if r.subj >= n {
                return Err(fail(format!("relations[{k}].subj"), "object index out of range"));
            }
            if r.obj >= n {
                return Err(fail(format!("relations[{k}].obj"), "object index out of range"));
            }
            if r.subj == r.obj {
                return Err(fail(format!("relations[{k}].obj"), "subject and object must differ"));
            }
            if r.predicate >= meta.num_predicates {
                return Err(fail(format!("relations[{k}].predicate"), "predicate out of range"));
            }
            if let Some(u) = &r.union {
                if u.len() != meta.visual_dim || !u.iter().all(|v| v.is_finite()) {
                    return Err(fail(format!("relations[{k}].union"), "length differs from d_v or non-finite"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMeta {
    #[serde(rename = "C")]
    pub num_predicates: usize,
    #[serde(rename = "N_obj")]
    pub num_object_classes: usize,
    #[serde(rename = "d_v")]
    pub visual_dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub meta: SplitMeta,
    pub images: Vec<SynthSceneGraph>,
}

impl Split {
    pub fn validate(&self) -> Result<()> {
        self.images.iter().try_for_each(|s| s.validate(&self.meta))
    }

    pub fn num_relations(&self) -> usize {
        self.images.iter().map(|s| s.relations.len()).sum()
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.images.iter().flat_map(|s| s.relations.iter().map(|r| r.predicate))
    }

    /// Deterministic split of images into `(kept, held_out)` with
    /// `round(fraction * n)` held-out images chosen by `seed`.
    pub fn hold_out(&self, fraction: f64, seed: u64) -> (Split, Split) {
        let mut idx: Vec<usize> = (0..self.images.len()).collect();
        Rng::new(seed).shuffle(&mut idx);
        let held = libm::round((self.images.len() as f64) * fraction) as usize;
        let mut held_idx: Vec<usize> = idx[..held].to_vec();
        let mut kept_idx: Vec<usize> = idx[held..].to_vec();
        held_idx.sort_unstable();
        kept_idx.sort_unstable();
        let pick = |ids: &[usize]| Split { meta: self.meta, images: ids.iter().map(|&i| self.images[i].clone()).collect() };
        (pick(&kept_idx), pick(&held_idx))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Training images.
    pub num_images: usize,
    /// Test images; `None` keeps a 70/30 train/test proportion.
    pub test_images: Option<usize>,
    #[serde(rename = "N_obj")]
    pub num_object_classes: usize,
    #[serde(rename = "C")]
    pub num_predicates: usize,
    #[serde(rename = "d_v")]
    pub visual_dim: usize,
    pub zipf_exponent: f64,
    pub seed: u64,
    /// Per-dimension standard deviation of the visual and union noise.
    pub noise: f64,
    /// Norm of each predicate prototype.
    pub evidence_scale: f64,
    /// Cosine similarity between a rare predicate's prototype and its
    /// frequent parent's.
    pub overlap: f64,
    /// Probability that a relation's subject and object take the
    /// predicate's preferred object classes.
    pub pair_affinity: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub max_relations: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_images: 2000,
            test_images: None,
            num_object_classes: 10,
            num_predicates: 20,
            visual_dim: 32,
            zipf_exponent: 1.5,
            seed: 42,
            noise: 1.0,
            evidence_scale: 3.0,
            overlap: 0.9,
            pair_affinity: 0.5,
            min_objects: 2,
            max_objects: 5,
            max_relations: 4,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: &str| Err(Error::InvalidConfig { field, reason: reason.to_string() });
        if self.num_predicates < 2 {
            return bad("C", "need at least two predicate classes");
        }
        if !(self.zipf_exponent > 0.0) {
            return bad("zipf_exponent", "must be positive");
        }
        if self.num_object_classes == 0 {
            return bad("N_obj", "must be positive");
        }
        if self.visual_dim == 0 {
            return bad("d_v", "must be positive");
        }
        if self.min_objects < 2 || self.max_objects < self.min_objects {
            return bad("min_objects", "need 2 <= min_objects <= max_objects");
        }
        if self.max_relations == 0 {
            return bad("max_relations", "must be positive");
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return bad("overlap", "must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.pair_affinity) {
            return bad("pair_affinity", "must lie in [0, 1]");
        }
        if !(self.noise >= 0.0) {
            return bad("noise", "must be non-negative");
        }
        Ok(())
    }

    pub fn test_count(&self) -> usize {
        self.test_images.unwrap_or_else(|| libm::round((self.num_images as f64) * 3.0 / 7.0) as usize)
    }

    pub fn meta(&self) -> SplitMeta {
        SplitMeta {
            num_predicates: self.num_predicates,
            num_object_classes: self.num_object_classes,
            visual_dim: self.visual_dim,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub train: Split,
    pub test: Split,
    /// Predicate classes that received no training relation.
    pub empty_classes: Vec<usize>,
}

/// Zipf weights `(k + 1)^-s` for `k` in `0..c`.
pub fn zipf_weights(c: usize, exponent: f64) -> Vec<f64> {
    (0..c).map(|k| math::powf((k + 1) as f64, -exponent)).collect()
}

struct World {
    object_protos: Vec<Vec<f64>>,
    predicate_protos: Vec<Vec<f64>>,
    preferred: Vec<(usize, usize)>,
    cumulative: Vec<f64>,
}

fn random_direction(rng: &mut Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let norm = math::sqrt(v.iter().map(|x| x * x).sum());
    v.into_iter().map(|x| x / norm).collect()
}

impl World {
    fn new(cfg: &GenConfig, rng: &mut Rng) -> Self {
        let d = cfg.visual_dim;
        let c = cfg.num_predicates;
        let object_protos = (0..cfg.num_object_classes).map(|_| random_direction(rng, d)).collect();
        let parents = c.div_ceil(2);
        let mut predicate_protos: Vec<Vec<f64>> = Vec::with_capacity(c);
        for k in 0..c {
            let fresh = random_direction(rng, d);
            let dir = if k < parents {
                fresh
            } else {
                let parent = &predicate_protos[k - parents];
                let a = cfg.overlap;
                let b = math::sqrt(1.0 - a * a);
                // Orthogonalize the fresh direction against the parent first so
                // the cosine with the parent is exactly `overlap`.
                let dot: f64 = fresh.iter().zip(parent).map(|(x, p)| x * p / cfg.evidence_scale).sum();
                let ortho: Vec<f64> = fresh.iter().zip(parent).map(|(x, p)| x - dot * p / cfg.evidence_scale).collect();
                let on = math::sqrt(ortho.iter().map(|x| x * x).sum()).max(1e-12);
                parent.iter().zip(&ortho).map(|(p, o)| a * p / cfg.evidence_scale + b * o / on).collect()
            };
            predicate_protos.push(dir.into_iter().map(|x| x * cfg.evidence_scale).collect());
        }
        let preferred = (0..c).map(|_| (rng.below(cfg.num_object_classes), rng.below(cfg.num_object_classes))).collect();
        let mut acc = 0.0;
        let cumulative = zipf_weights(c, cfg.zipf_exponent)
            .into_iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        World { object_protos, predicate_protos, preferred, cumulative }
    }

    fn scene(&self, cfg: &GenConfig, image_id: u64, rng: &mut Rng) -> SynthSceneGraph {
        let d = cfg.visual_dim;
        let n = cfg.min_objects + rng.below(cfg.max_objects - cfg.min_objects + 1);
        let max_rel = cfg.max_relations.min(n * (n - 1));
        let m = 1 + rng.below(max_rel);

        let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
        rng.shuffle(&mut pairs);
        pairs.truncate(m);

        let mut classes: Vec<Option<usize>> = vec![None; n];
        let mut predicates = Vec::with_capacity(m);
        for &(s, o) in &pairs {
            let k = rng.categorical(&self.cumulative);
            predicates.push(k);
            if rng.bernoulli(cfg.pair_affinity) {
                let (ps, po) = self.preferred[k];
                classes[s].get_or_insert(ps);
                classes[o].get_or_insert(po);
            }
        }
        let objects: Vec<SceneObject> = classes
            .into_iter()
            .map(|c| {
                let class_id = c.unwrap_or_else(|| rng.below(cfg.num_object_classes));
                let x1 = rng.uniform_range(0.0, 0.7);
                let y1 = rng.uniform_range(0.0, 0.7);
                let x2 = rng.uniform_range(x1 + 0.05, 1.0);
                let y2 = rng.uniform_range(y1 + 0.05, 1.0);
                let visual = self.object_protos[class_id].iter().map(|p| p + cfg.noise * rng.normal()).collect();
                SceneObject { class_id, bbox: [x1, y1, x2, y2], visual }
            })
            .collect();
        let relations = pairs
            .iter()
            .zip(&predicates)
            .map(|(&(s, o), &k)| {
                let union = (0..d)
                    .map(|t| objects[s].visual[t] + objects[o].visual[t] + self.predicate_protos[k][t] + cfg.noise * rng.normal())
                    .collect();
                Relation { subj: s, obj: o, predicate: k, union: Some(union) }
            })
            .collect();
        SynthSceneGraph { image_id, objects, relations }
    }
}

/// Generates disjoint train and test splits; a pure function of `cfg`.
pub fn generate(cfg: &GenConfig) -> Result<Generated> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let world = World::new(cfg, &mut root.substream(1));
    let mut rng = root.substream(2);
    let total = cfg.num_images + cfg.test_count();
    let images: Vec<SynthSceneGraph> = (0..total).map(|i| world.scene(cfg, i as u64, &mut rng)).collect();
    let (train_images, test_images) = {
        let mut images = images;
        let test = images.split_off(cfg.num_images);
        (images, test)
    };
    let meta = cfg.meta();
    let train = Split { meta, images: train_images };
    let test = Split { meta, images: test_images };
    let counts = class_counts(&train);
    let empty_classes = (0..cfg.num_predicates).filter(|&k| counts[k] == 0).collect();
    Ok(Generated { train, test, empty_classes })
}

pub fn class_counts(split: &Split) -> Vec<usize> {
    let mut counts = vec![0usize; split.meta.num_predicates];
    for k in split.labels() {
        counts[k] += 1;
    }
    counts
}

/// Class-balanced weight `(1 - beta) / (1 - beta^n)`.
pub fn effective_weight(beta: f64, n: usize) -> f64 {
    if n == 1 {
        return 1.0;
    }
    let p = math::powf(beta, n as f64);
    let denom = if p > 0.5 { math::one_minus_pow(beta, n as f64) } else { 1.0 - p };
    (1.0 - beta) / denom
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub counts: Vec<usize>,
    /// Class ids by descending count, ties by lower id.
    pub order: Vec<usize>,
    pub head_set: Vec<usize>,
    pub weights: Vec<f64>,
    /// Classes with no samples; their weight is the largest observed weight.
    pub unobserved: Vec<usize>,
}

impl ClassStats {
    pub fn is_head(&self, class: usize) -> bool {
        self.head_set.contains(&class)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// 0-based frequency rank of every class.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.counts.len()];
        for (r, &c) in self.order.iter().enumerate() {
            ranks[c] = r;
        }
        ranks
    }

    /// Weights rescaled so they sum to the number of classes.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        let c = self.weights.len() as f64;
        self.weights.iter().map(|w| w * c / total).collect()
    }
}

pub fn class_stats(split: &Split, beta: f64, h: usize) -> Result<ClassStats> {
    stats_from_counts(class_counts(split), beta, h)
}

pub fn stats_from_counts(counts: Vec<usize>, beta: f64, h: usize) -> Result<ClassStats> {
    let c = counts.len();
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidConfig { field: "beta", reason: "must lie in (0, 1)".to_string() });
    }
    if h == 0 || h > c {
        return Err(Error::InvalidConfig { field: "h", reason: format!("must lie in 1..={c}") });
    }
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let head_set = order[..h].to_vec();
    let mut weights: Vec<f64> = counts.iter().map(|&n| if n > 0 { effective_weight(beta, n) } else { 0.0 }).collect();
    let unobserved: Vec<usize> = (0..c).filter(|&k| counts[k] == 0).collect();
    let max_observed = weights.iter().copied().fold(0.0, f64::max);
    let fill = if max_observed > 0.0 { max_observed } else { 1.0 };
    for &k in &unobserved {
        weights[k] = fill;
    }
    Ok(ClassStats { counts, order, head_set, weights, unobserved })
}

/// Reference to one relation: image id plus index into its relation list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleRef {
    pub image_id: u64,
    pub relation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalancedIndex {
    pub target: usize,
    /// Exactly `target` references for every observed class, empty otherwise.
    pub per_class: Vec<Vec<SampleRef>>,
    pub missing: Vec<usize>,
    /// All references, shuffled.
    pub order: Vec<SampleRef>,
}

impl BalancedIndex {
    pub fn labelled(&self) -> impl Iterator<Item = (usize, SampleRef)> + '_ {
        self.per_class.iter().enumerate().flat_map(|(k, refs)| refs.iter().map(move |&r| (k, r)))
    }
}

/// Resamples every observed class to exactly `target` references: frequent
/// classes without replacement, rare classes by repeating every sample
/// `target / n` times and topping up with distinct draws.
pub fn balanced_resample(split: &Split, target: usize, seed: u64) -> Result<BalancedIndex> {
    if target == 0 {
        return Err(Error::InvalidConfig { field: "T", reason: "must be at least 1".to_string() });
    }
    if split.num_relations() == 0 {
        return Err(Error::EmptySplit);
    }
    let c = split.meta.num_predicates;
    let mut pools: Vec<Vec<SampleRef>> = vec![Vec::new(); c];
    for scene in &split.images {
        for (i, r) in scene.relations.iter().enumerate() {
            pools[r.predicate].push(SampleRef { image_id: scene.image_id, relation: i });
        }
    }
    let mut rng = Rng::new(seed);
    let mut per_class = Vec::with_capacity(c);
    let mut missing = Vec::new();
    for (k, mut pool) in pools.into_iter().enumerate() {
        if pool.is_empty() {
            missing.push(k);
            per_class.push(Vec::new());
            continue;
        }
        rng.shuffle(&mut pool);
        let n = pool.len();
        let picked = if n >= target {
            pool.truncate(target);
            pool
        } else {
            let mut out = Vec::with_capacity(target);
            for _ in 0..target / n {
                out.extend_from_slice(&pool);
            }
            out.extend_from_slice(&pool[..target % n]);
            out
        };
        per_class.push(picked);
    }
    let mut order: Vec<SampleRef> = per_class.iter().flatten().copied().collect();
    rng.shuffle(&mut order);
    Ok(BalancedIndex { target, per_class, missing, order })
}

/// Image lookup by id.
pub fn index_by_id(split: &Split) -> BTreeMap<u64, usize> {
    split.images.iter().enumerate().map(|(i, s)| (s.image_id, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene_with(preds: &[usize]) -> SynthSceneGraph {
        let objects = (0..2)
            .map(|_| SceneObject { class_id: 0, bbox: [0.1, 0.1, 0.5, 0.5], visual: vec![0.0; 2] })
            .collect();
        let relations = preds.iter().map(|&p| Relation { subj: 0, obj: 1, predicate: p, union: None }).collect();
        SynthSceneGraph { image_id: 0, objects, relations }
    }

    fn split_from_counts(counts: &[usize]) -> Split {
        let meta = SplitMeta { num_predicates: counts.len(), num_object_classes: 1, visual_dim: 2, seed: 0 };
        let images = counts
            .iter()
            .enumerate()
            .flat_map(|(k, &n)| core::iter::repeat_n(k, n))
            .enumerate()
            .map(|(i, k)| {
                let mut s = scene_with(&[k]);
                s.image_id = i as u64;
                s
            })
            .collect();
        Split { meta, images }
    }

    #[test]
    fn weight_closed_forms() {
        assert_eq!(effective_weight(0.9999, 1), 1.0);
        assert_eq!(effective_weight(0.5, 2), 2.0 / 3.0);
        assert_eq!(effective_weight(0.5, 2), 0.5 / 0.75);
    }

    #[test]
    fn weights_fall_with_count() {
        let w: Vec<f64> = [1, 2, 10, 100, 1000, 10000].iter().map(|&n| effective_weight(0.9999, n)).collect();
        assert!(w.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn stats_head_set_and_unobserved() {
        let stats = stats_from_counts(vec![5, 9, 0, 9, 1], 0.9, 2).unwrap();
        assert_eq!(stats.order, vec![1, 3, 0, 4, 2]);
        assert_eq!(stats.head_set, vec![1, 3]);
        assert_eq!(stats.unobserved, vec![2]);
        assert_eq!(stats.weights[2], stats.weights[4]);
        assert!(stats.weights.iter().all(|&w| w > 0.0));
        assert!(stats_from_counts(vec![1, 1], 1.0, 1).is_err());
        assert!(stats_from_counts(vec![1, 1], 0.5, 3).is_err());
    }

    #[test]
    fn resample_small_counts() {
        let split = split_from_counts(&[100, 10, 1]);
        let idx = balanced_resample(&split, 5, 3).unwrap();
        assert_eq!(idx.order.len(), 15);
        assert!(idx.per_class.iter().all(|r| r.len() == 5));
        let single = &idx.per_class[2];
        assert!(single.iter().all(|r| *r == single[0]));
        let mut distinct = idx.per_class[0].clone();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct.len(), 5);

        let one = balanced_resample(&split, 1, 3).unwrap();
        assert_eq!(one.order.len(), 3);
        let mut all = one.order.clone();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn resample_reports_missing_and_empty() {
        let split = split_from_counts(&[3, 0, 2]);
        let idx = balanced_resample(&split, 4, 0).unwrap();
        assert_eq!(idx.missing, vec![1]);
        assert!(idx.per_class[1].is_empty());
        let empty = split_from_counts(&[0, 0]);
        assert_eq!(balanced_resample(&empty, 4, 0), Err(Error::EmptySplit));
    }

    #[test]
    fn validate_catches_bad_scenes() {
        let meta = SplitMeta { num_predicates: 3, num_object_classes: 1, visual_dim: 2, seed: 0 };
        let mut s = scene_with(&[0]);
        assert!(s.validate(&meta).is_ok());
        s.relations[0].obj = 0;
        match s.validate(&meta) {
            Err(Error::InvalidScene { path, .. }) => assert_eq!(path, "relations[0].obj"),
            other => panic!("{other:?}"),
        }
        let mut s = scene_with(&[0]);
        s.objects[1].bbox = [0.6, 0.1, 0.5, 0.5];
        match s.validate(&meta) {
            Err(Error::InvalidScene { path, .. }) => assert_eq!(path, "objects[1].bbox"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_images_is_valid() {
        let cfg = GenConfig { num_images: 0, test_images: Some(0), ..GenConfig::default() };
        let g = generate(&cfg).unwrap();
        assert!(g.train.images.is_empty() && g.test.images.is_empty());
        assert_eq!(g.empty_classes.len(), cfg.num_predicates);
    }

    #[test]
    fn generated_scenes_are_valid_and_disjoint() {
        let cfg = GenConfig { num_images: 60, test_images: Some(20), ..GenConfig::default() };
        let g = generate(&cfg).unwrap();
        g.train.validate().unwrap();
        g.test.validate().unwrap();
        let train_ids: Vec<u64> = g.train.images.iter().map(|s| s.image_id).collect();
        assert!(g.test.images.iter().all(|s| !train_ids.contains(&s.image_id)));
        assert_eq!(generate(&cfg).unwrap(), g);
    }

    #[test]
    fn rare_prototypes_have_requested_overlap() {
        let cfg = GenConfig::default();
        let world = World::new(&cfg, &mut Rng::new(1));
        let half = cfg.num_predicates / 2;
        let (a, b) = (&world.predicate_protos[half], &world.predicate_protos[0]);
        let cos = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (cfg.evidence_scale * cfg.evidence_scale);
        assert!((cos - cfg.overlap).abs() < 1e-9, "{cos}");
        let norm = math::sqrt(a.iter().map(|x| x * x).sum());
        assert!((norm - cfg.evidence_scale).abs() < 1e-9);
    }
}
