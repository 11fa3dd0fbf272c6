use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, VariantKind};
use crate::data::Task;
use crate::error::{config_err, Error, Result};
use crate::model::EvalBranch;

/// One training run. Missing JSON fields take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    /// When set, must match the manifest's task.
    pub task: Option<Task>,
    pub variant: VariantKind,
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub eval_branch: EvalBranch,
    /// Stop once validation macro-AUC reaches this many percent.
    pub target_val_auc: Option<f64>,
    /// Train on records without labels too.
    pub include_unlabeled: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            task: None,
            variant: VariantKind::Mrm,
            model: ModelConfig::default(),
            epochs: 100,
            batch_size: 64,
            lr: 0.001,
            seed: 0,
            out: PathBuf::from("runs/default"),
            eval_branch: EvalBranch::Ensemble,
            target_val_auc: None,
            include_unlabeled: false,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".to_string());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            problems.push(format!("lr must be positive, got {}", self.lr));
        }
        if let Some(t) = self.target_val_auc {
            if !(0.0..=100.0).contains(&t) {
                problems.push(format!("target_val_auc must be a percentage, got {t}"));
            }
        }
        if let Err(e) = self.model.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(config_err(problems.join("; ")))
        }
    }

    pub fn manifest(&self) -> Result<&Path> {
        self.manifest.as_deref().ok_or_else(|| config_err("no manifest given"))
    }
}
