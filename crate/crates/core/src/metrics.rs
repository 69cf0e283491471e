//! Triplet ranking and recall metrics.
//!
//! `R@K` averages per-image hit fractions; `mR@K` averages per-class recall
//! where each class's recall is tallied over all of its ground-truth
//! instances in the split. Reports keep the raw counts so results can be
//! compared exactly.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

use crate::data::{index_by_id, ClassStats, Split};
use crate::error::{Error, Result};
use crate::features::Task;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedTriplet {
    pub subj: usize,
    pub obj: usize,
    pub predicate: usize,
    pub score: f64,
}

/// Scored triplets for one image. `labels` holds predicted object classes
/// and is only consulted for SGCls matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePrediction {
    pub image_id: u64,
    pub triplets: Vec<PredictedTriplet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
}

fn triplet_order(a: &PredictedTriplet, b: &PredictedTriplet) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.subj.cmp(&b.subj))
        .then(a.obj.cmp(&b.obj))
        .then(a.predicate.cmp(&b.predicate))
}

/// Expands a `pairs x C` score matrix into triplets.
pub fn triplets_from_scores(pairs: &[(usize, usize)], scores: &Tensor) -> Vec<PredictedTriplet> {
    let mut out = Vec::with_capacity(pairs.len() * scores.cols());
    for (i, &(subj, obj)) in pairs.iter().enumerate() {
        for (predicate, &score) in scores.row_slice(i).iter().enumerate() {
            out.push(PredictedTriplet { subj, obj, predicate, score });
        }
    }
    out
}

/// Sorts by score (descending), then subject, object and predicate. With the
/// graph constraint only the best predicate of each ordered pair survives.
pub fn rank_triplets(mut triplets: Vec<PredictedTriplet>, graph_constraint: bool) -> Vec<PredictedTriplet> {
    triplets.sort_by(triplet_order);
    if graph_constraint {
        let mut seen: Vec<(usize, usize)> = Vec::new();
        triplets.retain(|t| {
            if seen.contains(&(t.subj, t.obj)) {
                false
            } else {
                seen.push((t.subj, t.obj));
                true
            }
        });
    }
    triplets
}

/// Harmonic mean of recall and mean recall; 0 when both are 0.
pub fn f_at_k(r: f64, mr: f64) -> f64 {
    if r + mr == 0.0 {
        0.0
    } else {
        2.0 * r * mr / (r + mr)
    }
}

pub fn m_at_k(r: f64, mr: f64) -> f64 {
    (r + mr) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMetrics {
    pub k: usize,
    pub recall: f64,
    pub mean_recall: f64,
    pub f: f64,
    pub m: f64,
    /// `None` for classes absent from the ground truth.
    pub per_class_recall: Vec<Option<f64>>,
    /// `(hits, ground truth)` per image with at least one relation.
    pub image_hits: Vec<(usize, usize)>,
    pub class_hits: Vec<usize>,
    pub class_totals: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub graph_constraint: bool,
    pub num_images: usize,
    pub num_classes: usize,
    pub by_k: Vec<KMetrics>,
}

impl MetricsReport {
    pub fn at(&self, k: usize) -> Option<&KMetrics> {
        self.by_k.iter().find(|m| m.k == k)
    }

    /// Classes with no ground-truth instance, excluded from mean recall.
    pub fn absent_classes(&self) -> Vec<usize> {
        self.by_k.first().map(|m| (0..self.num_classes).filter(|&c| m.class_totals[c] == 0).collect()).unwrap_or_default()
    }
}

/// Recall metrics for `predictions` against the ground truth in `split`.
/// Predictions whose image is missing from the split are rejected; split
/// images without predictions score zero hits.
pub fn evaluate(
    predictions: &[ImagePrediction],
    split: &Split,
    ks: &[usize],
    graph_constraint: bool,
    task: Task,
) -> Result<MetricsReport> {
    let c = split.meta.num_predicates;
    let by_id = index_by_id(split);
    let mut ranked: Vec<Option<(Vec<PredictedTriplet>, Option<&Vec<usize>>)>> = vec![None; split.images.len()];
    for p in predictions {
        let Some(&i) = by_id.get(&p.image_id) else {
            return Err(Error::Mismatch(format!("prediction for unknown image {}", p.image_id)));
        };
        if let Some(t) = p.triplets.iter().find(|t| t.predicate >= c || !t.score.is_finite()) {
            return Err(Error::Mismatch(format!("image {}: bad triplet {:?}", p.image_id, t)));
        }
        ranked[i] = Some((rank_triplets(p.triplets.clone(), graph_constraint), p.labels.as_ref()));
    }
    let mut by_k = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut image_hits = Vec::new();
        let mut class_hits = vec![0usize; c];
        let mut class_totals = vec![0usize; c];
        for (scene, pred) in split.images.iter().zip(&ranked) {
            if scene.relations.is_empty() {
                continue;
            }
            let mut hits = 0;
            for rel in &scene.relations {
                class_totals[rel.predicate] += 1;
                let found = pred.as_ref().is_some_and(|(list, labels)| {
                    let labels_ok = match (task, labels) {
                        (Task::SgCls, Some(l)) => {
                            l.get(rel.subj) == Some(&scene.objects[rel.subj].class_id)
                                && l.get(rel.obj) == Some(&scene.objects[rel.obj].class_id)
                        }
                        (Task::SgCls, None) => false,
                        (Task::PredCls, _) => true,
                    };
                    labels_ok
                        && list.iter().take(k).any(|t| t.subj == rel.subj && t.obj == rel.obj && t.predicate == rel.predicate)
                });
                if found {
                    hits += 1;
                    class_hits[rel.predicate] += 1;
                }
            }
            image_hits.push((hits, scene.relations.len()));
        }
        let recall = if image_hits.is_empty() {
            0.0
        } else {
            image_hits.iter().map(|&(h, n)| h as f64 / n as f64).sum::<f64>() / image_hits.len() as f64
        };
        let per_class_recall: Vec<Option<f64>> =
            (0..c).map(|k| (class_totals[k] > 0).then(|| class_hits[k] as f64 / class_totals[k] as f64)).collect();
        let present: Vec<f64> = per_class_recall.iter().flatten().copied().collect();
        let mean_recall = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
        by_k.push(KMetrics {
            k,
            recall,
            mean_recall,
            f: f_at_k(recall, mean_recall),
            m: m_at_k(recall, mean_recall),
            per_class_recall,
            image_hits,
            class_hits,
            class_totals,
        });
    }
    Ok(MetricsReport { task, graph_constraint, num_images: split.images.len(), num_classes: c, by_k })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCurveRow {
    pub class_id: usize,
    pub frequency_rank: usize,
    pub recall_baseline: Option<f64>,
    pub recall_ft: Option<f64>,
    pub recall_htcl: Option<f64>,
    pub gate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDelta {
    pub name: String,
    pub k: usize,
    pub recall: f64,
    pub mean_recall: f64,
    pub f: f64,
    pub delta_recall: f64,
    pub delta_mean_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    /// Ordered by descending training frequency.
    pub classes: Vec<ClassCurveRow>,
    /// One row per model and K, deltas relative to the baseline.
    pub deltas: Vec<ModelDelta>,
}

/// Compares a baseline, a fine-tuned and an HTCL evaluation on the same split.
/// Per-class curves use the first K of each report.
pub fn bias_report(
    baseline: &MetricsReport,
    finetuned: &MetricsReport,
    htcl: &MetricsReport,
    stats: &ClassStats,
    gate: &[f64],
) -> Result<BiasReport> {
    let c = stats.num_classes();
    for (name, r) in [("baseline", baseline), ("finetuned", finetuned), ("htcl", htcl)] {
        if r.num_classes != c {
            return Err(Error::Mismatch(format!("{name} has {} classes, statistics have {c}", r.num_classes)));
        }
    }
    if gate.len() != c {
        return Err(Error::Mismatch(format!("gate has {} classes, statistics have {c}", gate.len())));
    }
    let first = |r: &MetricsReport| r.by_k.first().map(|m| m.per_class_recall.clone()).unwrap_or_else(|| vec![None; c]);
    let (rb, rf, rh) = (first(baseline), first(finetuned), first(htcl));
    let ranks = stats.ranks();
    let classes = stats
        .order
        .iter()
        .map(|&k| ClassCurveRow {
            class_id: k,
            frequency_rank: ranks[k],
            recall_baseline: rb[k],
            recall_ft: rf[k],
            recall_htcl: rh[k],
            gate: gate[k],
        })
        .collect();
    let mut deltas = Vec::new();
    for base in &baseline.by_k {
        for (name, r) in [("baseline", baseline), ("finetuned", finetuned), ("htcl", htcl)] {
            let Some(m) = r.at(base.k) else {
                return Err(Error::Mismatch(format!("{name} lacks K={}", base.k)));
            };
            deltas.push(ModelDelta {
                name: name.into(),
                k: base.k,
                recall: m.recall,
                mean_recall: m.mean_recall,
                f: m.f,
                delta_recall: m.recall - base.recall,
                delta_mean_recall: m.mean_recall - base.mean_recall,
            });
        }
    }
    Ok(BiasReport { classes, deltas })
}
