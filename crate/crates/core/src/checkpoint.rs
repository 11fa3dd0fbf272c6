//! Checkpoint directories: `checkpoint.json` plus one MRMT file per tensor
//! (parameters, Adam moments, batch-norm running statistics).

use std::fs;
use std::path::Path;

use mrm_tensor::{io, AdamConfig, AdamState, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, VariantKind};
use crate::error::{config_err, Error, Result};
use crate::experiment::EpochLog;
use crate::model::Model;

pub const FORMAT_VERSION: u32 = 1;
const META: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub variant: VariantKind,
    pub model: ModelConfig,
    pub task: String,
    pub vocabulary: Vec<String>,
    pub seed: u64,
    /// Epochs completed.
    pub epoch: usize,
    /// Optimizer steps taken.
    pub step: u64,
    pub best_val_auc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub params: Vec<String>,
    pub stats: Vec<String>,
    pub adam: Option<AdamMeta>,
    /// Per-epoch log up to `epoch`.
    #[serde(default)]
    pub history: Vec<EpochLog>,
}

/// Everything needed to evaluate or resume a run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Model<f32>,
    pub adam: Option<AdamState<f32>>,
}

fn file(kind: &str, name: &str) -> String {
    format!("{kind}.{name}.mrmt")
}

impl Checkpoint {
    /// Writes into a sibling temp directory, then swaps it in, so an
    /// interrupted save never leaves a half-written checkpoint at `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tmp = dir.with_extension("tmp");
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let m = &self.model;
        for (name, t) in m.params.iter() {
            io::save(tmp.join(file("param", name)), t)?;
        }
        for (name, s) in &m.stats {
            io::save(tmp.join(file("bn_mean", name)), &Tensor::new([s.mean.len()], s.mean.clone())?)?;
            io::save(tmp.join(file("bn_var", name)), &Tensor::new([s.var.len()], s.var.clone())?)?;
        }
        if let Some(adam) = &self.adam {
            for (i, name) in m.params.names().iter().enumerate() {
                io::save(tmp.join(file("adam_m", name)), &adam.m[i])?;
                io::save(tmp.join(file("adam_v", name)), &adam.v[i])?;
            }
        }
        let path = tmp.join(META);
        let text = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(META);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(config_err(format!(
                "{}: checkpoint format {} (expected {FORMAT_VERSION})",
                dir.display(),
                meta.format_version
            )));
        }
        let mut model = Model::<f32>::new(meta.model.clone(), meta.variant, 0)?;
        if model.params.names() != meta.params.as_slice() {
            return Err(config_err(format!("{}: parameter list does not match the architecture", dir.display())));
        }
        let read = |kind: &str, name: &str, shape: &[usize]| -> Result<Tensor<f32>> {
            let p = dir.join(file(kind, name));
            let t = io::load::<f32>(&p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            if t.shape() != shape {
                return Err(config_err(format!("{}: shape {:?}, expected {shape:?}", p.display(), t.shape())));
            }
            Ok(t)
        };
        for i in 0..model.params.len() {
            let name = model.params.name(i).to_string();
            let shape = model.params.value(i).shape().to_vec();
            *model.params.value_mut(i) = read("param", &name, &shape)?;
        }
        let stat_names: Vec<&str> = model.stats.iter().map(|(n, _)| n.as_str()).collect();
        if stat_names != meta.stats {
            return Err(config_err(format!("{}: batch-norm layers do not match the architecture", dir.display())));
        }
        for (name, s) in &mut model.stats {
            let c = s.channels();
            s.mean = read("bn_mean", name, &[c])?.into_data();
            s.var = read("bn_var", name, &[c])?.into_data();
        }
        let adam = match &meta.adam {
            None => None,
            Some(a) => {
                let mut state = AdamState::new(
                    AdamConfig {
                        lr: a.lr,
                        beta1: a.beta1,
                        beta2: a.beta2,
                        eps: a.eps,
                    },
                    &model.params,
                );
                state.t = a.t;
                for i in 0..model.params.len() {
                    let name = model.params.name(i);
                    let shape = model.params.value(i).shape();
                    state.m[i] = read("adam_m", name, shape)?;
                    state.v[i] = read("adam_v", name, shape)?;
                }
                Some(state)
            }
        };
        Ok(Checkpoint { meta, model, adam })
    }
}

pub fn adam_meta(a: &AdamState<f32>) -> AdamMeta {
    AdamMeta {
        lr: a.config.lr,
        beta1: a.config.beta1,
        beta2: a.config.beta2,
        eps: a.config.eps,
        t: a.t,
    }
}
