//! JSON checkpoints: layer sizes, the training config, class counts and every
//! parameter as `name -> {shape, values}`. Floats are written with the
//! shortest representation that parses back to the same bits.

use std::collections::BTreeMap;
use std::path::Path;

use htcl_core::data::{stats_from_counts, ClassStats};
use htcl_core::model::{HtclModel, ModelDims};
use htcl_core::params::ParamStore;
use htcl_core::train::TrainConfig;
use htcl_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{HtclError, Result};
use crate::io::{read_json, write_json};

pub const FORMAT: &str = "htcl-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointFile {
    pub format: String,
    pub version: u32,
    pub dims: ModelDims,
    pub config: TrainConfig,
    /// Training-split predicate counts, for class statistics and gate plots.
    pub class_counts: Vec<usize>,
    pub params: BTreeMap<String, TensorRecord>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: HtclModel,
    pub store: ParamStore,
    pub config: TrainConfig,
    pub class_counts: Vec<usize>,
}

impl Checkpoint {
    pub fn new(model: HtclModel, store: ParamStore, config: TrainConfig, class_counts: Vec<usize>) -> Self {
        Checkpoint { model, store, config, class_counts }
    }

    pub fn stats(&self) -> Result<ClassStats> {
        let h = self.config.h.min(self.class_counts.len());
        Ok(stats_from_counts(self.class_counts.clone(), self.config.beta, h)?)
    }

    pub fn to_file(&self, path: &Path) -> Result<CheckpointFile> {
        let mut params = BTreeMap::new();
        for (name, t) in self.store.iter() {
            if !t.is_finite() {
                return Err(HtclError::Format { path: path.to_path_buf(), reason: format!("parameter `{name}` is not finite") });
            }
            params.insert(name.to_string(), TensorRecord { shape: t.shape().to_vec(), values: t.data().to_vec() });
        }
        Ok(CheckpointFile {
            format: FORMAT.to_string(),
            version: VERSION,
            dims: self.model.dims,
            config: self.config.clone(),
            class_counts: self.class_counts.clone(),
            params,
        })
    }

    /// Rebuilds the network from its sizes and fills in every parameter. The
    /// file must name exactly the parameters the network registers.
    pub fn from_file(file: CheckpointFile, path: &Path) -> Result<Self> {
        let bad = |reason: String| HtclError::Format { path: path.to_path_buf(), reason };
        if file.format != FORMAT {
            return Err(bad(format!("format is `{}`, expected `{FORMAT}`", file.format)));
        }
        if file.version != VERSION {
            return Err(bad(format!("version {} is not supported", file.version)));
        }
        if file.class_counts.len() != file.dims.num_predicates {
            return Err(bad(format!("class_counts has {} entries for C = {}", file.class_counts.len(), file.dims.num_predicates)));
        }
        let (model, mut store) = HtclModel::new(file.dims, 0)?;
        let expected: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        if let Some(extra) = file.params.keys().find(|k| !expected.contains(k)) {
            return Err(bad(format!("params.{extra}: not a parameter of this network")));
        }
        for name in &expected {
            let rec = file.params.get(name).ok_or_else(|| bad(format!("params.{name}: missing")))?;
            let t = Tensor::new(rec.shape.clone(), rec.values.clone()).map_err(|e| bad(format!("params.{name}: {e}")))?;
            store.set(name, t).map_err(|e| bad(format!("params.{name}: {e}")))?;
        }
        Ok(Checkpoint { model, store, config: file.config, class_counts: file.class_counts })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_file(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_file(read_json(path)?, path)
    }
}
