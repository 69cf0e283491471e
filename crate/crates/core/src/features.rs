//! Object encoder, context encoder and predicate decoder: the stand-in for a
//! classical scene-graph backbone, turning a scene into one feature per
//! ordered object pair.

use alloc::format;
use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::data::SynthSceneGraph;
use crate::error::{shape_err, Result};
use crate::model::ModelDims;
use crate::nn::{Embedding, EncoderLayer, Linear, Mlp};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Which object labels the pipeline may see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Task {
    /// Ground-truth boxes and labels.
    PredCls,
    /// Ground-truth boxes; labels are predicted.
    SgCls,
}

#[derive(Debug, Clone)]
pub struct ObjectFeatures {
    /// Encoder output `f`, one row per object.
    pub encoded: Var,
    /// Context-aware features `e`.
    pub context: Var,
    pub label_logits: Var,
    /// Labels used downstream: ground truth for PredCls, argmax otherwise.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct FeaturePipeline {
    pub position: Linear,
    /// Object-class word table; the last row is the "unknown" label.
    pub object_words: Embedding,
    pub object_encoder: Mlp,
    pub label_head: Linear,
    pub context_input: Linear,
    pub context: EncoderLayer,
    pub decoder: Mlp,
    dims: ModelDims,
}

impl FeaturePipeline {
    pub fn new(store: &mut ParamStore, dims: &ModelDims, rng: &mut Rng) -> Result<Self> {
        let d = dims;
        Ok(FeaturePipeline {
            position: Linear::new(store, "oe.pos", 4, d.pos_dim, rng)?,
            object_words: Embedding::new(store, "emb.obj", d.num_object_classes + 1, d.word_dim, rng)?,
            object_encoder: Mlp::new(store, "oe.mlp", [d.visual_dim + d.pos_dim + d.word_dim, d.object_dim, d.object_dim], rng)?,
            label_head: Linear::new(store, "oe.cls", d.object_dim, d.num_object_classes, rng)?,
            context_input: Linear::new(store, "pe.in", d.visual_dim + d.object_dim + d.word_dim, d.model_dim, rng)?,
            context: EncoderLayer::new(store, "pe.enc", d.model_dim, d.heads, d.ff_dim, rng)?,
            decoder: Mlp::new(store, "pd.mlp", [2 * d.model_dim + d.visual_dim, d.relation_dim, d.relation_dim], rng)?,
            dims: *dims,
        })
    }

    fn check_scene(&self, scene: &SynthSceneGraph) -> Result<()> {
        if scene.objects.is_empty() {
            return shape_err("object_encode", format!("image {} has no objects", scene.image_id));
        }
        if let Some(o) = scene.objects.iter().find(|o| o.visual.len() != self.dims.visual_dim) {
            return shape_err(
                "object_encode",
                format!("visual has {} values, model expects {}", o.visual.len(), self.dims.visual_dim),
            );
        }
        Ok(())
    }

    fn visuals(&self, t: &mut Tape, scene: &SynthSceneGraph) -> Result<Var> {
        let rows: Vec<&[f64]> = scene.objects.iter().map(|o| o.visual.as_slice()).collect();
        Ok(t.input(Tensor::from_rows(&rows, self.dims.visual_dim)?))
    }

    /// `f = OE([v, pos(b), emb(c0)])`. Under SGCls the label slot holds the
    /// "unknown" word.
    pub fn object_encode(&self, t: &mut Tape, store: &ParamStore, scene: &SynthSceneGraph, task: Task) -> Result<Var> {
        self.check_scene(scene)?;
        let visual = self.visuals(t, scene)?;
        let boxes: Vec<[f64; 4]> = scene.objects.iter().map(|o| o.bbox).collect();
        let boxes = t.input(Tensor::from_rows(&boxes, 4)?);
        let pos = self.position.forward(t, store, boxes)?;
        let words: Vec<usize> = match task {
            Task::PredCls => scene.objects.iter().map(|o| o.class_id).collect(),
            Task::SgCls => alloc::vec![self.dims.num_object_classes; scene.objects.len()],
        };
        let emb = self.object_words.forward(t, store, &words)?;
        let x = t.concat_cols(&[visual, pos, emb])?;
        self.object_encoder.forward(t, store, x)
    }

    /// `e = PE([v, f, emb(c_hat)])` with a single self-attention block, plus
    /// object label logits from `f`.
    pub fn context_encode(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        scene: &SynthSceneGraph,
        encoded: Var,
        task: Task,
    ) -> Result<ObjectFeatures> {
        let label_logits = self.label_head.forward(t, store, encoded)?;
        let labels = match task {
            Task::PredCls => scene.objects.iter().map(|o| o.class_id).collect(),
            Task::SgCls => t.value(label_logits).argmax_rows(),
        };
        let visual = self.visuals(t, scene)?;
        let emb = self.object_words.forward(t, store, &labels)?;
        let x = t.concat_cols(&[visual, encoded, emb])?;
        let x = self.context_input.forward(t, store, x)?;
        let context = self.context.forward(t, store, x)?;
        Ok(ObjectFeatures { encoded, context, label_logits, labels })
    }

    /// `r = PD([e_i, e_j, u_ij])` for every requested ordered pair.
    pub fn predicate_decode(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        context: Var,
        pairs: &[(usize, usize)],
        unions: &[Vec<f64>],
    ) -> Result<Var> {
        if pairs.len() != unions.len() || pairs.is_empty() {
            return shape_err("predicate_decode", format!("{} pairs, {} union features", pairs.len(), unions.len()));
        }
        let subj: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let obj: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let es = t.gather_rows(context, &subj)?;
        let eo = t.gather_rows(context, &obj)?;
        let u = t.input(Tensor::from_rows(unions, self.dims.visual_dim)?);
        let x = t.concat_cols(&[es, eo, u])?;
        self.decoder.forward(t, store, x)
    }

    /// Runs all three stages for the given pairs.
    pub fn forward(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        scene: &SynthSceneGraph,
        pairs: &[(usize, usize)],
        task: Task,
    ) -> Result<(ObjectFeatures, Var)> {
        let encoded = self.object_encode(t, store, scene, task)?;
        let objects = self.context_encode(t, store, scene, encoded, task)?;
        let unions: Vec<Vec<f64>> = pairs.iter().map(|&(i, j)| scene.union_feature(i, j)).collect();
        let r = self.predicate_decode(t, store, objects.context, pairs, &unions)?;
        Ok((objects, r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Relation, SceneObject};
    use alloc::vec;

    fn setup() -> (FeaturePipeline, ParamStore) {
        let dims = ModelDims::small(3, 4, 6);
        let mut store = ParamStore::new();
        let p = FeaturePipeline::new(&mut store, &dims, &mut Rng::new(11)).unwrap();
        (p, store)
    }

    fn object(class_id: usize, bbox: [f64; 4], seed: f64) -> SceneObject {
        SceneObject { class_id, bbox, visual: (0..6).map(|i| libm::sin(i as f64 + seed)).collect() }
    }

    fn scene(objects: Vec<SceneObject>) -> SynthSceneGraph {
        SynthSceneGraph { image_id: 1, objects, relations: Vec::<Relation>::new() }
    }

    #[test]
    fn single_object_shape() {
        let (p, store) = setup();
        let s = scene(vec![object(1, [0.1, 0.1, 0.4, 0.5], 0.0)]);
        let mut t = Tape::new();
        let f = p.object_encode(&mut t, &store, &s, Task::PredCls).unwrap();
        assert_eq!(t.value(f).dims(), (1, p.dims.object_dim));
    }

    #[test]
    fn identical_objects_identical_features() {
        let (p, store) = setup();
        let o = object(2, [0.2, 0.1, 0.6, 0.9], 1.0);
        let s = scene(vec![o.clone(), o]);
        let mut t = Tape::new();
        let f = p.object_encode(&mut t, &store, &s, Task::PredCls).unwrap();
        let v = t.value(f);
        assert_eq!(v.row_slice(0), v.row_slice(1));
    }

    #[test]
    fn bbox_changes_features() {
        let (p, store) = setup();
        let a = scene(vec![object(0, [0.1, 0.1, 0.4, 0.5], 0.0)]);
        let b = scene(vec![object(0, [0.1, 0.2, 0.4, 0.5], 0.0)]);
        let mut t = Tape::new();
        let fa = p.object_encode(&mut t, &store, &a, Task::PredCls).unwrap();
        let fb = p.object_encode(&mut t, &store, &b, Task::PredCls).unwrap();
        let delta: f64 = t.value(fa).data().iter().zip(t.value(fb).data()).map(|(x, y)| (x - y).abs()).sum();
        assert!(delta > 0.0);
    }

    #[test]
    fn context_is_permutation_equivariant() {
        let (p, store) = setup();
        let objs = vec![
            object(0, [0.1, 0.1, 0.4, 0.5], 0.0),
            object(1, [0.3, 0.2, 0.9, 0.6], 1.5),
            object(2, [0.0, 0.5, 0.2, 0.9], 3.0),
        ];
        let perm = [2usize, 0, 1];
        let permuted = scene(perm.iter().map(|&i| objs[i].clone()).collect());
        let original = scene(objs);
        let mut t = Tape::new();
        let fa = p.object_encode(&mut t, &store, &original, Task::PredCls).unwrap();
        let ea = p.context_encode(&mut t, &store, &original, fa, Task::PredCls).unwrap();
        let fb = p.object_encode(&mut t, &store, &permuted, Task::PredCls).unwrap();
        let eb = p.context_encode(&mut t, &store, &permuted, fb, Task::PredCls).unwrap();
        for (new_row, &old_row) in perm.iter().enumerate() {
            let a = t.value(ea.context).row_slice(old_row).to_vec();
            let b = t.value(eb.context).row_slice(new_row);
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swapping_visuals_swaps_label_logits() {
        let (p, store) = setup();
        let bbox = [0.2, 0.2, 0.6, 0.7];
        let a = object(0, bbox, 0.0);
        let b = object(0, bbox, 2.0);
        let s1 = scene(vec![a.clone(), b.clone()]);
        let s2 = scene(vec![b, a]);
        let mut t = Tape::new();
        let f1 = p.object_encode(&mut t, &store, &s1, Task::SgCls).unwrap();
        let o1 = p.context_encode(&mut t, &store, &s1, f1, Task::SgCls).unwrap();
        let f2 = p.object_encode(&mut t, &store, &s2, Task::SgCls).unwrap();
        let o2 = p.context_encode(&mut t, &store, &s2, f2, Task::SgCls).unwrap();
        assert_eq!(t.value(o1.label_logits).row_slice(0), t.value(o2.label_logits).row_slice(1));
        assert_eq!(t.value(o1.label_logits).row_slice(1), t.value(o2.label_logits).row_slice(0));
    }

    #[test]
    fn decoder_shapes_and_order() {
        let (p, store) = setup();
        let s = scene(vec![object(0, [0.1, 0.1, 0.4, 0.5], 0.0), object(1, [0.3, 0.2, 0.9, 0.6], 1.5)]);
        let mut t = Tape::new();
        let (_, r) = p.forward(&mut t, &store, &s, &[(0, 1), (1, 0)], Task::PredCls).unwrap();
        let v = t.value(r);
        assert_eq!(v.dims(), (2, p.dims.relation_dim));
        assert_ne!(v.row_slice(0), v.row_slice(1));
    }

    #[test]
    fn decoder_is_finite_for_extreme_inputs() {
        let (p, store) = setup();
        let mut big = object(0, [0.1, 0.1, 0.4, 0.5], 0.0);
        big.visual = vec![1e3, -1e3, 1e3, -1e3, 1e3, -1e3];
        let mut other = big.clone();
        other.visual.iter_mut().for_each(|v| *v = -*v);
        let s = scene(vec![big, other]);
        let mut t = Tape::new();
        let (_, r) = p.forward(&mut t, &store, &s, &[(0, 1)], Task::PredCls).unwrap();
        assert!(t.value(r).is_finite());
    }

    #[test]
    fn wrong_visual_dim_is_an_error() {
        let (p, store) = setup();
        let mut o = object(0, [0.1, 0.1, 0.4, 0.5], 0.0);
        o.visual.push(0.0);
        let mut t = Tape::new();
        assert!(p.object_encode(&mut t, &store, &scene(vec![o]), Task::PredCls).is_err());
    }
}
