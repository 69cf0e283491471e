//! Brute-force recall counting and random evaluation fixtures shared by the
//! metric tests.

use htcl_core::data::{Relation, SceneObject, Split, SplitMeta, SynthSceneGraph};
use htcl_core::metrics::{ImagePrediction, PredictedTriplet};
use htcl_core::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleCounts {
    pub image_hits: Vec<(usize, usize)>,
    pub class_hits: Vec<usize>,
    pub class_totals: Vec<usize>,
}

/// `a` is ranked before `b`: higher score, then lower subject, object and
/// predicate.
fn beats(a: &PredictedTriplet, b: &PredictedTriplet) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    (a.subj, a.obj, a.predicate) < (b.subj, b.obj, b.predicate)
}

/// Whether `gt` lands in the top `k` of `triplets`, decided by counting the
/// candidates that outrank it instead of sorting.
fn in_top_k(triplets: &[PredictedTriplet], gt: &Relation, k: usize, graph_constraint: bool) -> bool {
    let Some(target) = triplets
        .iter()
        .find(|t| t.subj == gt.subj && t.obj == gt.obj && t.predicate == gt.predicate)
    else {
        return false;
    };
    if !graph_constraint {
        return triplets.iter().filter(|t| beats(t, target)).count() < k;
    }
    // Only each pair's best triplet is kept; the target must be its pair's best.
    let best_of = |s: usize, o: usize| {
        triplets
            .iter()
            .filter(|t| t.subj == s && t.obj == o)
            .fold(None::<&PredictedTriplet>, |acc, t| match acc {
                Some(a) if beats(a, t) => Some(a),
                _ => Some(t),
            })
    };
    if best_of(gt.subj, gt.obj) != Some(target) {
        return false;
    }
    let mut pairs: Vec<(usize, usize)> = triplets.iter().map(|t| (t.subj, t.obj)).collect();
    pairs.sort_unstable();
    pairs.dedup();
    let ahead = pairs
        .iter()
        .filter(|&&(s, o)| (s, o) != (gt.subj, gt.obj))
        .filter(|&&(s, o)| beats(best_of(s, o).unwrap(), target))
        .count();
    ahead < k
}

pub fn oracle_counts(preds: &[ImagePrediction], split: &Split, k: usize, graph_constraint: bool) -> OracleCounts {
    let c = split.meta.num_predicates;
    let mut out = OracleCounts { image_hits: Vec::new(), class_hits: vec![0; c], class_totals: vec![0; c] };
    for scene in &split.images {
        if scene.relations.is_empty() {
            continue;
        }
        let triplets: &[PredictedTriplet] =
            preds.iter().find(|p| p.image_id == scene.image_id).map(|p| p.triplets.as_slice()).unwrap_or(&[]);
        let mut hits = 0;
        for rel in &scene.relations {
            out.class_totals[rel.predicate] += 1;
            if in_top_k(triplets, rel, k, graph_constraint) {
                hits += 1;
                out.class_hits[rel.predicate] += 1;
            }
        }
        out.image_hits.push((hits, scene.relations.len()));
    }
    out
}

/// Recall and mean recall straight from counts.
pub fn oracle_rates(counts: &OracleCounts) -> (f64, f64) {
    let n = counts.image_hits.len();
    let r = if n == 0 { 0.0 } else { counts.image_hits.iter().map(|&(h, t)| h as f64 / t as f64).sum::<f64>() / n as f64 };
    let present: Vec<f64> = counts
        .class_totals
        .iter()
        .zip(&counts.class_hits)
        .filter(|(t, _)| **t > 0)
        .map(|(&t, &h)| h as f64 / t as f64)
        .collect();
    let mr = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    (r, mr)
}

/// `images` random scenes with 2..=5 objects and scores drawn from a coarse
/// grid so ties are common.
pub fn random_case(seed: u64, images: usize, c: usize) -> (Split, Vec<ImagePrediction>) {
    let mut rng = Rng::new(seed);
    let meta = SplitMeta { num_predicates: c, num_object_classes: 3, visual_dim: 1, seed };
    let mut scenes = Vec::new();
    let mut preds = Vec::new();
    for image_id in 0..images as u64 {
        let n = 2 + rng.below(4);
        let objects = (0..n)
            .map(|_| SceneObject { class_id: rng.below(3), bbox: [0.1, 0.1, 0.9, 0.9], visual: vec![0.0] })
            .collect();
        let mut relations: Vec<Relation> = Vec::new();
        for _ in 0..rng.below(5) {
            let subj = rng.below(n);
            let obj = (subj + 1 + rng.below(n - 1)) % n;
            relations.push(Relation { subj, obj, predicate: rng.below(c), union: None });
        }
        let mut triplets = Vec::new();
        for subj in 0..n {
            for obj in 0..n {
                if subj == obj {
                    continue;
                }
                for predicate in 0..c {
                    if rng.bernoulli(0.8) {
                        triplets.push(PredictedTriplet { subj, obj, predicate, score: rng.below(6) as f64 / 5.0 });
                    }
                }
            }
        }
        rng.shuffle(&mut triplets);
        scenes.push(SynthSceneGraph { image_id, objects, relations });
        preds.push(ImagePrediction { image_id, triplets, labels: None });
    }
    (Split { meta, images: scenes }, preds)
}
