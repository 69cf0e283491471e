//! The full network: feature pipeline plus cooperative head.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::data::SynthSceneGraph;
use crate::error::{Error, Result};
use crate::features::{FeaturePipeline, ObjectFeatures, Task};
use crate::htcl::{cooperate, HtclHead};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub num_predicates: usize,
    pub num_object_classes: usize,
    pub visual_dim: usize,
    pub pos_dim: usize,
    pub word_dim: usize,
    pub object_dim: usize,
    pub model_dim: usize,
    pub relation_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub tpfe_layers: usize,
    pub projection_dim: usize,
}

impl ModelDims {
    /// Desk-scale sizes.
    pub fn new(num_predicates: usize, num_object_classes: usize, visual_dim: usize) -> Self {
        ModelDims {
            num_predicates,
            num_object_classes,
            visual_dim,
            pos_dim: 16,
            word_dim: 32,
            object_dim: 64,
            model_dim: 64,
            relation_dim: 64,
            heads: 4,
            ff_dim: 128,
            tpfe_layers: 4,
            projection_dim: 64,
        }
    }

    /// Tiny sizes for unit tests and gradient checks.
    pub fn small(num_predicates: usize, num_object_classes: usize, visual_dim: usize) -> Self {
        ModelDims {
            num_predicates,
            num_object_classes,
            visual_dim,
            pos_dim: 3,
            word_dim: 4,
            object_dim: 6,
            model_dim: 8,
            relation_dim: 6,
            heads: 2,
            ff_dim: 8,
            tpfe_layers: 1,
            projection_dim: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("C", self.num_predicates),
            ("N_obj", self.num_object_classes),
            ("d_v", self.visual_dim),
            ("pos_dim", self.pos_dim),
            ("word_dim", self.word_dim),
            ("object_dim", self.object_dim),
            ("model_dim", self.model_dim),
            ("relation_dim", self.relation_dim),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
            ("projection_dim", self.projection_dim),
        ];
        if let Some((field, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig { field, reason: "must be positive".into() });
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig { field: "heads", reason: "must divide model_dim".into() });
        }
        Ok(())
    }
}

/// Which branches produce the final prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchMode {
    HpOnly,
    TpfrOnly,
    Full,
}

/// How the cooperative mixture `z_o` becomes a distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixture {
    /// `softmax(z_o)`.
    Softmax,
    /// `z_o / sum(z_o)`, the mixture itself rescaled to sum to one.
    Renormalize,
}

/// What a forward pass computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardOptions {
    pub task: Task,
    pub mode: BranchMode,
    /// Run the encoder stack of the tail-prefer branch.
    pub use_tpfe: bool,
    /// Let the cooperative prediction send gradient into `z_h`. When off,
    /// the head-prefer logits enter the mixture as constants.
    pub head_coop_grad: bool,
    pub mixture: Mixture,
}

impl ForwardOptions {
    pub fn new(task: Task, mode: BranchMode) -> Self {
        ForwardOptions { task, mode, use_tpfe: true, head_coop_grad: false, mixture: Mixture::Softmax }
    }
}

/// Everything one image's forward pass records on the tape.
#[derive(Debug, Clone)]
pub struct ImageForward {
    pub objects: ObjectFeatures,
    pub pairs: Vec<(usize, usize)>,
    pub r: Var,
    pub z_h: Var,
    /// Fused relation tokens `g`, absent for the head-prefer branch alone.
    pub tokens: Option<Var>,
    pub r_t: Option<Var>,
    pub z_t: Option<Var>,
    pub z_o: Option<Var>,
    /// Final predicate distribution per pair.
    pub probs: Var,
}

#[derive(Debug, Clone)]
pub struct HtclModel {
    pub dims: ModelDims,
    pub features: FeaturePipeline,
    pub head: HtclHead,
}

/// Every ordered pair of distinct objects, subject-major.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect()
}

impl HtclModel {
    /// Builds the network and its freshly initialized parameters.
    pub fn new(dims: ModelDims, seed: u64) -> Result<(Self, ParamStore)> {
        dims.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let features = FeaturePipeline::new(&mut store, &dims, &mut rng)?;
        let head = HtclHead::new(&mut store, &dims, &mut rng)?;
        Ok((HtclModel { dims, features, head }, store))
    }

    pub fn hpc_params(&self) -> Vec<ParamId> {
        self.head.hpc.params().to_vec()
    }

    pub fn tpc_params(&self) -> Vec<ParamId> {
        self.head.tpc.params().to_vec()
    }

    /// Runs the feature pipeline and the selected branches over `pairs`.
    pub fn forward(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        scene: &SynthSceneGraph,
        pairs: &[(usize, usize)],
        opts: &ForwardOptions,
    ) -> Result<ImageForward> {
        let mode = opts.mode;
        let (objects, r) = self.features.forward(t, store, scene, pairs, opts.task)?;
        let z_h = self.head.hp_classify(t, store, r)?;
        let mut out = ImageForward {
            objects,
            pairs: pairs.to_vec(),
            r,
            z_h,
            tokens: None,
            r_t: None,
            z_t: None,
            z_o: None,
            probs: z_h,
        };
        if mode == BranchMode::HpOnly {
            out.probs = t.softmax(z_h);
            return Ok(out);
        }
        let tokens = self.tokens(t, store, &out)?;
        let r_t = self.head.tpfe_forward(t, store, tokens, opts.use_tpfe)?;
        let z_t = self.head.tp_classify(t, store, r_t)?;
        out.tokens = Some(tokens);
        out.r_t = Some(r_t);
        out.z_t = Some(z_t);
        out.probs = match mode {
            BranchMode::Full => {
                let gate = self.head.gate_var(t, store);
                let head = if opts.head_coop_grad { z_h } else { t.input(t.value(z_h).clone()) };
                let z_o = cooperate(t, head, z_t, gate)?;
                out.z_o = Some(z_o);
                match opts.mixture {
                    Mixture::Softmax => t.softmax(z_o),
                    Mixture::Renormalize => {
                        // Every entry of z_o is positive, so the floor never binds.
                        let log = t.log_clamped(z_o, f64::MIN_POSITIVE);
                        t.softmax(log)
                    }
                }
            }
            _ => t.softmax(z_t),
        };
        Ok(out)
    }

    /// `g = MLP[r, s]` for every pair of a forward pass.
    fn tokens(&self, t: &mut Tape, store: &ParamStore, f: &ImageForward) -> Result<Var> {
        let subj: Vec<usize> = f.pairs.iter().map(|p| f.objects.labels[p.0]).collect();
        let obj: Vec<usize> = f.pairs.iter().map(|p| f.objects.labels[p.1]).collect();
        let s = self.head.semantic_rep(t, store, &self.features.object_words, f.z_h, &subj, &obj)?;
        self.head.fuse(t, store, f.r, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GenConfig};

    #[test]
    fn pairs_enumeration() {
        assert_eq!(all_pairs(1), Vec::new());
        assert_eq!(all_pairs(3), alloc::vec![(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]);
    }

    #[test]
    fn forward_shapes_per_mode() {
        let cfg = GenConfig { num_images: 3, test_images: Some(0), num_predicates: 5, num_object_classes: 3, visual_dim: 4, ..GenConfig::default() };
        let data = generate(&cfg).unwrap();
        let (model, store) = HtclModel::new(ModelDims::small(5, 3, 4), 1).unwrap();
        let scene = &data.train.images[0];
        let pairs = all_pairs(scene.objects.len());
        for mode in [BranchMode::HpOnly, BranchMode::TpfrOnly, BranchMode::Full] {
            let mut t = Tape::new();
            let f = model.forward(&mut t, &store, scene, &pairs, &ForwardOptions::new(Task::PredCls, mode)).unwrap();
            let p = t.value(f.probs);
            assert_eq!(p.dims(), (pairs.len(), 5));
            for i in 0..p.rows() {
                assert!((p.row_slice(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            assert_eq!(f.z_o.is_some(), mode == BranchMode::Full);
        }
        let mut opts = ForwardOptions::new(Task::PredCls, BranchMode::Full);
        opts.mixture = Mixture::Renormalize;
        let mut t = Tape::new();
        let f = model.forward(&mut t, &store, scene, &pairs, &opts).unwrap();
        let z = t.value(f.z_o.unwrap());
        let p = t.value(f.probs);
        for i in 0..z.rows() {
            let total: f64 = z.row_slice(i).iter().sum();
            for (a, b) in z.row_slice(i).iter().zip(p.row_slice(i)) {
                assert!((a / total - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let (_, a) = HtclModel::new(ModelDims::small(4, 2, 3), 9).unwrap();
        let (_, b) = HtclModel::new(ModelDims::small(4, 2, 3), 9).unwrap();
        let (_, c) = HtclModel::new(ModelDims::small(4, 2, 3), 10).unwrap();
        assert!(a.diff_names(&b).is_empty());
        assert!(!a.diff_names(&c).is_empty());
    }

    #[test]
    fn heads_must_divide_model_dim() {
        let mut d = ModelDims::small(4, 2, 3);
        d.heads = 3;
        assert!(HtclModel::new(d, 0).is_err());
    }
}
