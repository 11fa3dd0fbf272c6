use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use mrm_tensor::{AdamConfig, AdamState, Tensor};
use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::checkpoint::{adam_meta, Checkpoint, CheckpointMeta, FORMAT_VERSION};
use crate::data::{batch_iterator, split_folds, Dataset, Splits};
use crate::error::{config_err, Error, Result};
use crate::metrics::{evaluate, MetricsReport, RunMetrics};
use crate::model::layers::mix;
use crate::model::loss::LossBreakdown;
use crate::model::{EvalBranch, Model};

/// Loss components of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    pub loss: LossBreakdown,
}

/// Epoch means of the step losses, plus validation metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub loss: LossBreakdown,
    pub val: Option<RunMetrics>,
}

const METRICS_HEADER: &str = "epoch,steps,l_total,l_detect,l_m_z12,l_m_z34,l_m_out,val_auc,val_f1,val_accuracy";
const STEPS_HEADER: &str = "epoch,step,l_total,l_detect,l_m_z12,l_m_z34,l_m_out";

impl EpochLog {
    fn csv_row(&self) -> String {
        let l = &self.loss;
        let v = |f: fn(&RunMetrics) -> f64| self.val.as_ref().map_or(String::new(), |m| f(m).to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.steps,
            l.l_total,
            l.l_detect,
            l.l_m_z12,
            l.l_m_z34,
            l.l_m_out,
            v(|m| m.macro_auc),
            v(|m| m.macro_f1),
            v(|m| m.accuracy)
        )
    }
}

impl StepLog {
    fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.step, l.l_total, l.l_detect, l.l_m_z12, l.l_m_z34, l.l_m_out
        )
    }
}

/// Which records to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(config_err(format!("unknown split `{s}` (expected train, val or test)"))),
        }
    }
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Eval-mode probabilities for `indices`, batch by batch.
pub fn predict_split(model: &mut Model<f32>, data: &Dataset, indices: &[usize], batch_size: usize, branch: EvalBranch) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let k = data.num_classes();
    let mut scores = Vec::with_capacity(indices.len() * k);
    for batch in batch_iterator(data, indices, batch_size, None) {
        let p = model.predict(&batch.x)?;
        scores.extend_from_slice(p.select(branch)?.data());
    }
    let (_, labels) = data.gather(indices);
    Ok((Tensor::new([indices.len(), k], scores)?, labels))
}

/// Scores `indices` and computes every metric.
pub fn evaluate_split(
    model: &mut Model<f32>,
    data: &Dataset,
    indices: &[usize],
    batch_size: usize,
    branch: EvalBranch,
    seed: u64,
) -> Result<MetricsReport> {
    if indices.is_empty() {
        return Err(config_err("cannot evaluate an empty split"));
    }
    let (scores, labels) = predict_split(model, data, indices, batch_size, branch)?;
    Ok(evaluate(&scores, &labels, &data.vocabulary)?.into_report(data.task.name(), model.kind.name(), seed))
}

/// Training state for one run: model, optimizer, counters and history.
pub struct Trainer {
    pub cfg: RunConfig,
    pub data: Dataset,
    pub splits: Splits,
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    /// Epochs completed.
    pub epoch: usize,
    pub step: u64,
    pub best: Option<(usize, f64)>,
    pub best_model: Option<Model<f32>>,
    pub history: Vec<EpochLog>,
}

impl Trainer {
    /// Validates the config against the data and initializes the model from
    /// `cfg.seed`. The model's class count follows the vocabulary.
    pub fn new(mut cfg: RunConfig, data: Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(config_err("dataset has no records"));
        }
        if let Some(t) = cfg.task {
            if t != data.task {
                return Err(config_err(format!("config task {t} but the manifest is {}", data.task)));
            }
        }
        if cfg.model.num_classes != data.num_classes() {
            log::info!("num_classes {} -> {} to match the vocabulary", cfg.model.num_classes, data.num_classes());
            cfg.model.num_classes = data.num_classes();
        }
        if cfg.model.input_length != data.signal_len() {
            return Err(config_err(format!(
                "model expects {} samples but records have {}",
                cfg.model.input_length,
                data.signal_len()
            )));
        }
        cfg.validate()?;
        let mut splits = split_folds(&data);
        if !cfg.include_unlabeled {
            splits.train = data.labeled(&splits.train);
        }
        if splits.train.is_empty() {
            return Err(config_err("no labeled training records in folds 1-8"));
        }
        let model = Model::<f32>::new(cfg.model.clone(), cfg.variant, cfg.seed)?;
        let adam = AdamState::new(
            AdamConfig {
                lr: cfg.lr,
                ..Default::default()
            },
            &model.params,
        );
        Ok(Trainer {
            cfg,
            data,
            splits,
            model,
            adam,
            epoch: 0,
            step: 0,
            best: None,
            best_model: None,
            history: Vec::new(),
        })
    }

    /// Restores model, optimizer and counters from the `last` checkpoint that
    /// [`fit`] writes. The best model comes from `best` when it exists.
    pub fn resume(cfg: RunConfig, data: Dataset, last: &Path, best: Option<&Path>) -> Result<Self> {
        let mut t = Trainer::new(cfg, data)?;
        let ck = Checkpoint::load(last)?;
        t.check_compatible(&ck.meta)?;
        t.adam = ck.adam.ok_or_else(|| config_err(format!("{} has no optimizer state", last.display())))?;
        t.model = ck.model;
        t.epoch = ck.meta.epoch;
        t.step = ck.meta.step;
        t.best = ck.meta.best_epoch.zip(ck.meta.best_val_auc);
        t.history = ck.meta.history;
        if let Some(b) = best.filter(|b| b.exists()) {
            t.best_model = Some(Checkpoint::load(b)?.model);
        }
        Ok(t)
    }

    fn check_compatible(&self, meta: &CheckpointMeta) -> Result<()> {
        if meta.vocabulary != self.data.vocabulary {
            return Err(config_err("checkpoint vocabulary differs from the manifest"));
        }
        if meta.variant != self.cfg.variant || meta.model != self.cfg.model || meta.seed != self.cfg.seed {
            return Err(config_err("checkpoint was written by a different run configuration"));
        }
        Ok(())
    }

    /// One pass over the training split. `on_step` sees every step's losses.
    pub fn train_epoch(&mut self, on_step: &mut dyn FnMut(&StepLog)) -> Result<EpochLog> {
        let epoch = self.epoch + 1;
        let shuffle = mix(&[self.cfg.seed, epoch as u64]);
        let mut sum = LossBreakdown::default();
        let mut steps = 0;
        for batch in batch_iterator(&self.data, &self.splits.train, self.cfg.batch_size, Some(shuffle)) {
            let (loss, grads) = self.model.train_step(&batch.x, &batch.y, self.cfg.seed, self.step)?;
            if !loss.l_total.is_finite() {
                return Err(Error::Numerical(format!("loss is {} at step {}", loss.l_total, self.step)));
            }
            self.adam.step(&mut self.model.params, &grads)?;
            self.step += 1;
            steps += 1;
            on_step(&StepLog {
                epoch,
                step: self.step,
                loss,
            });
            sum.l_total += loss.l_total;
            sum.l_detect += loss.l_detect;
            sum.l_m_z12 += loss.l_m_z12;
            sum.l_m_z34 += loss.l_m_z34;
            sum.l_m_out += loss.l_m_out;
        }
        let n = steps as f64;
        let mean = LossBreakdown {
            l_total: sum.l_total / n,
            l_detect: sum.l_detect / n,
            l_m_z12: sum.l_m_z12 / n,
            l_m_z34: sum.l_m_z34 / n,
            l_m_out: sum.l_m_out / n,
        };
        self.epoch = epoch;
        Ok(EpochLog {
            epoch,
            steps,
            loss: mean,
            val: None,
        })
    }

    pub fn evaluate(&mut self, split: Split) -> Result<MetricsReport> {
        let idx = self.splits.get(split).to_vec();
        evaluate_split(&mut self.model, &self.data, &idx, self.cfg.batch_size, self.cfg.eval_branch, self.cfg.seed)
    }

    /// Trains one epoch, scores validation and tracks the best epoch.
    pub fn run_epoch(&mut self, on_step: &mut dyn FnMut(&StepLog)) -> Result<EpochLog> {
        let mut log = self.train_epoch(on_step)?;
        if !self.splits.val.is_empty() {
            let m = self.evaluate(Split::Val)?.metrics;
            if self.best.is_none_or(|(_, b)| m.macro_auc > b) {
                self.best = Some((log.epoch, m.macro_auc));
                self.best_model = Some(self.model.clone());
            }
            log.val = Some(m);
        }
        self.history.push(log.clone());
        Ok(log)
    }

    pub fn reached_target(&self) -> bool {
        match (self.cfg.target_val_auc, self.history.last().and_then(|h| h.val)) {
            (Some(t), Some(v)) => v.macro_auc >= t,
            _ => false,
        }
    }

    pub fn checkpoint(&self, model: &Model<f32>, with_optimizer: bool) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                format_version: FORMAT_VERSION,
                variant: self.cfg.variant,
                model: self.cfg.model.clone(),
                task: self.data.task.name().to_string(),
                vocabulary: self.data.vocabulary.clone(),
                seed: self.cfg.seed,
                epoch: self.epoch,
                step: self.step,
                best_val_auc: self.best.map(|b| b.1),
                best_epoch: self.best.map(|b| b.0),
                params: model.params.names().to_vec(),
                stats: model.stats.iter().map(|(n, _)| n.clone()).collect(),
                adam: with_optimizer.then(|| adam_meta(&self.adam)),
                history: self.history.clone(),
            },
            model: model.clone(),
            adam: with_optimizer.then(|| self.adam.clone()),
        }
    }

    /// The validation-selected model, or the current one without validation.
    pub fn selected_model(&self) -> &Model<f32> {
        self.best_model.as_ref().unwrap_or(&self.model)
    }
}

/// Output files of a run directory.
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn last(&self) -> PathBuf {
        self.dir.join("checkpoints").join("last")
    }

    pub fn best(&self) -> PathBuf {
        self.dir.join("checkpoints").join("best")
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn steps_csv(&self) -> PathBuf {
        self.dir.join("steps.csv")
    }

    pub fn create(&self) -> Result<()> {
        let ck = self.dir.join("checkpoints");
        fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))
    }

    pub fn write_metrics(&self, history: &[EpochLog]) -> Result<()> {
        let path = self.metrics_csv();
        let mut text = format!("{METRICS_HEADER}\n");
        for h in history {
            text.push_str(&h.csv_row());
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Opens `steps.csv` for appending, dropping rows past `keep_through`.
    pub fn open_steps(&self, keep_through: u64) -> Result<File> {
        let path = self.steps_csv();
        let mut kept = vec![STEPS_HEADER.to_string()];
        if let Ok(f) = File::open(&path) {
            for line in BufReader::new(f).lines().skip(1) {
                let line = line.map_err(|e| Error::io(&path, e))?;
                let step = line.split(',').nth(1).and_then(|s| s.parse::<u64>().ok());
                if step.is_some_and(|s| s <= keep_through) {
                    kept.push(line);
                }
            }
        }
        fs::write(&path, kept.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
        OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))
    }
}

pub(crate) fn append_step(f: &mut File, path: &Path, s: &StepLog) -> Result<()> {
    writeln!(f, "{}", s.csv_row()).map_err(|e| Error::io(path, e))
}

/// Runs remaining epochs, writing logs and checkpoints under `files` when
/// given. Stops early at `target_val_auc`.
pub fn fit(t: &mut Trainer, files: Option<&RunFiles>, on_step: &mut dyn FnMut(&StepLog)) -> Result<f64> {
    let start = Instant::now();
    let mut steps_file = files.map(|f| f.open_steps(t.step)).transpose()?;
    while t.epoch < t.cfg.epochs {
        let mut io_err = None;
        let log = t.run_epoch(&mut |s| {
            on_step(s);
            if let (Some(f), Some(files)) = (steps_file.as_mut(), files) {
                if let Err(e) = append_step(f, &files.steps_csv(), s) {
                    io_err.get_or_insert(e);
                }
            }
        })?;
        if let Some(e) = io_err {
            return Err(e);
        }
        log::info!(
            "epoch {}: l_total {:.5} val auc {}",
            log.epoch,
            log.loss.l_total,
            log.val.map_or("-".into(), |v| format!("{:.2}", v.macro_auc))
        );
        if let Some(files) = files {
            files.write_metrics(&t.history)?;
            if t.best.is_some_and(|(e, _)| e == log.epoch) {
                t.checkpoint(t.selected_model(), false).save(&files.best())?;
            }
            t.checkpoint(&t.model, true).save(&files.last())?;
        }
        if t.reached_target() {
            log::info!("validation AUC target reached after epoch {}", log.epoch);
            break;
        }
    }
    Ok(start.elapsed().as_secs_f64())
}
