#[allow(dead_code)]
mod support {
    pub mod oracle;
}

use htcl_core::autograd::Tape;
use htcl_core::data::{balanced_resample, effective_weight, generate, stats_from_counts, GenConfig};
use htcl_core::features::Task;
use htcl_core::htcl::cooperate;
use htcl_core::losses::{contrastive_loss, cross_entropy, head_center_loss, reweighted_ce, two_view_pairing, ClassCenters};
use htcl_core::metrics::{evaluate, f_at_k, m_at_k};
use htcl_core::model::{HtclModel, ModelDims};
use htcl_core::rng::Rng;
use htcl_core::Tensor;
use proptest::prelude::*;
use support::oracle::random_case;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-4.0f64..4.0, rows * cols).prop_map(move |v| Tensor::matrix(rows, cols, v).unwrap())
}

fn unit_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    for row in out.data_mut().chunks_mut(cols) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        row.iter_mut().for_each(|v| *v /= n);
    }
    out
}

fn con_loss(q: &Tensor, positives: &[usize], tau: f64) -> f64 {
    let mut t = Tape::new();
    let q = t.input(q.clone());
    let l = contrastive_loss(&mut t, q, positives, tau).unwrap();
    t.value(l).item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(x in matrix(4, 6)) {
        let mut t = Tape::new();
        let v = t.input(x);
        let p = t.softmax(v);
        let p = t.value(p);
        for i in 0..p.rows() {
            prop_assert!((p.row_slice(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.row_slice(i).iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn contrastive_is_nonnegative_and_rotation_invariant(x in matrix(6, 3), angle in 0.0f64..std::f64::consts::TAU) {
        let q = unit_rows(&x);
        let pos = two_view_pairing(3);
        let base = con_loss(&q, &pos, 0.1);
        prop_assert!(base >= 0.0);
        let (s, c) = angle.sin_cos();
        let rot = Tensor::matrix(3, 3, vec![c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let rotated = q.matmul(&rot).unwrap();
        prop_assert!((con_loss(&rotated, &pos, 0.1) - base).abs() < 1e-9 * base.max(1.0));
    }

    #[test]
    fn contrastive_is_permutation_invariant(x in matrix(6, 3), seed in any::<u64>()) {
        let q = unit_rows(&x);
        let pos = two_view_pairing(3);
        let mut perm: Vec<usize> = (0..6).collect();
        Rng::new(seed).shuffle(&mut perm);
        // Row i of the permuted matrix is old row perm[i].
        let mut inv = [0; 6];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let rows: Vec<&[f64]> = perm.iter().map(|&p| q.row_slice(p)).collect();
        let permuted = Tensor::from_rows(&rows, 3).unwrap();
        let new_pos: Vec<usize> = perm.iter().map(|&p| inv[pos[p]]).collect();
        let a = con_loss(&q, &pos, 0.1);
        prop_assert!((con_loss(&permuted, &new_pos, 0.1) - a).abs() < 1e-9 * a.max(1.0));
    }

    #[test]
    fn head_center_is_translation_invariant(x in matrix(5, 3), c in matrix(5, 3), shift in prop::collection::vec(-3.0f64..3.0, 3)) {
        let labels = [0, 1, 0, 2, 1];
        let mut centers = ClassCenters::new(3, 3, &[0, 1], 0.0);
        centers.update(&c, &labels);
        let loss = |feats: &Tensor, centers: &ClassCenters| {
            let mut t = Tape::new();
            let f = t.input(feats.clone());
            let l = head_center_loss(&mut t, f, &labels, centers).unwrap().unwrap();
            t.value(l).item()
        };
        let a = loss(&x, &centers);
        let mut moved = x.clone();
        for row in moved.data_mut().chunks_mut(3) {
            row.iter_mut().zip(&shift).for_each(|(v, s)| *v += s);
        }
        let mut shifted_centers = centers.clone();
        for center in &mut shifted_centers.centers {
            center.iter_mut().zip(&shift).for_each(|(v, s)| *v += s);
        }
        prop_assert!((loss(&moved, &shifted_centers) - a).abs() < 1e-9 * a.max(1.0));
    }

    #[test]
    fn f_and_m_are_ordered(r in 0.0f64..=1.0, mr in 0.0f64..=1.0) {
        let f = f_at_k(r, mr);
        let m = m_at_k(r, mr);
        let eps = 1e-15;
        prop_assert!(r.min(mr) <= f + eps);
        prop_assert!(f <= m + eps);
        prop_assert!(m <= r.max(mr) + eps);
    }

    #[test]
    fn recall_grows_with_k(seed in any::<u64>(), gc in any::<bool>()) {
        let (split, preds) = random_case(seed, 8, 4);
        let report = evaluate(&preds, &split, &[1, 2, 5, 10, 20, 50, 100], gc, Task::PredCls).unwrap();
        for w in report.by_k.windows(2) {
            prop_assert!(w[0].recall <= w[1].recall);
            prop_assert!(w[0].mean_recall <= w[1].mean_recall);
            for (a, b) in w[0].class_hits.iter().zip(&w[1].class_hits) {
                prop_assert!(a <= b);
            }
        }
    }

    #[test]
    fn metrics_ignore_prediction_order(seed in any::<u64>(), gc in any::<bool>()) {
        let (split, preds) = random_case(seed, 6, 4);
        let mut shuffled = preds.clone();
        let mut rng = Rng::new(seed ^ 1);
        rng.shuffle(&mut shuffled);
        for p in &mut shuffled {
            rng.shuffle(&mut p.triplets);
        }
        let a = evaluate(&preds, &split, &[1, 5, 20], gc, Task::PredCls).unwrap();
        let b = evaluate(&shuffled, &split, &[1, 5, 20], gc, Task::PredCls).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cooperate_is_bounded_by_branches(zh in matrix(3, 5), zt in matrix(3, 5), c in matrix(1, 5)) {
        let mut t = Tape::new();
        let h = t.input(zh);
        let tl = t.input(zt);
        let cv = t.input(c);
        let g = t.sigmoid(cv);
        let z = cooperate(&mut t, h, tl, g).unwrap();
        let nh = t.softmax(h);
        let nt = t.softmax(tl);
        let (z, nh, nt) = (t.value(z), t.value(nh), t.value(nt));
        for i in 0..z.len() {
            let (a, b) = (nh.data()[i], nt.data()[i]);
            prop_assert!(a.min(b) - 1e-15 <= z.data()[i] && z.data()[i] <= a.max(b) + 1e-15);
        }
    }

    #[test]
    fn uniform_counts_make_reweighting_plain_ce(z in matrix(6, 4), n in 1usize..5000, labels in prop::collection::vec(0usize..4, 6)) {
        let stats = stats_from_counts(vec![n; 4], 0.9999, 2).unwrap();
        let w = stats.normalized_weights();
        prop_assert!(w.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let mut t = Tape::new();
        let zv = t.input(z);
        let p = t.softmax(zv);
        let (rw, _) = reweighted_ce(&mut t, p, &labels, &stats.weights).unwrap();
        let ce = cross_entropy(&mut t, zv, &labels).unwrap();
        let scale = stats.weights[0];
        prop_assert!((t.value(rw).item() - scale * t.value(ce).item()).abs() < 1e-9 * t.value(ce).item().max(1.0));
    }

    #[test]
    fn effective_weight_is_decreasing(beta in 0.01f64..0.99999, n in 1usize..100_000) {
        let a = effective_weight(beta, n);
        let b = effective_weight(beta, n + 1);
        prop_assert!(a > 0.0 && a <= 1.0);
        prop_assert!(b <= a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn balanced_index_has_target_per_observed_class(seed in any::<u64>(), target in 1usize..60) {
        let cfg = GenConfig { num_images: 40, test_images: Some(0), num_predicates: 8, seed, ..GenConfig::default() };
        let data = generate(&cfg).unwrap();
        let idx = balanced_resample(&data.train, target, seed).unwrap();
        let counts = htcl_core::data::class_counts(&data.train);
        for (k, refs) in idx.per_class.iter().enumerate() {
            if counts[k] == 0 {
                prop_assert!(refs.is_empty() && idx.missing.contains(&k));
            } else {
                prop_assert_eq!(refs.len(), target);
            }
        }
        prop_assert_eq!(idx.order.len(), target * (8 - idx.missing.len()));
    }

    #[test]
    fn tail_encoder_is_permutation_equivariant(x in matrix(4, 8), seed in any::<u64>()) {
        let (model, store) = HtclModel::new(ModelDims::small(5, 3, 4), seed).unwrap();
        let mut perm: Vec<usize> = (0..4).collect();
        Rng::new(seed).shuffle(&mut perm);
        let rows: Vec<&[f64]> = perm.iter().map(|&p| x.row_slice(p)).collect();
        let px = Tensor::from_rows(&rows, 8).unwrap();
        let run = |input: &Tensor| {
            let mut t = Tape::new();
            let v = t.input(input.clone());
            let out = model.head.tpfe_forward(&mut t, &store, v, true).unwrap();
            t.value(out).clone()
        };
        let (a, b) = (run(&x), run(&px));
        for (i, &p) in perm.iter().enumerate() {
            for (u, v) in b.row_slice(i).iter().zip(a.row_slice(p)) {
                prop_assert!((u - v).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn saturated_gates_follow_one_branch() {
    let mut rng = Rng::new(5);
    let zh = Tensor::matrix(4, 6, (0..24).map(|_| rng.normal()).collect()).unwrap();
    let zt = Tensor::matrix(4, 6, (0..24).map(|_| rng.normal()).collect()).unwrap();
    for (c, expect) in [(20.0, &zh), (-20.0, &zt)] {
        let mut t = Tape::new();
        let h = t.input(zh.clone());
        let tl = t.input(zt.clone());
        let cv = t.input(Tensor::filled(1, 6, c));
        let g = t.sigmoid(cv);
        let z = cooperate(&mut t, h, tl, g).unwrap();
        assert_eq!(t.value(z).argmax_rows(), expect.argmax_rows());
    }
}
