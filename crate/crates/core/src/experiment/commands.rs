use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::trainer::{evaluate_split, fit, RunFiles, Split, StepLog, Trainer};
use super::RunConfig;
use crate::checkpoint::Checkpoint;
use crate::config::VariantKind;
use crate::data::{load_dataset, split_folds, Dataset};
use crate::error::{config_err, Error, Result};
use crate::metrics::{aggregate_runs, csv_err, write_json, Aggregate, MetricsReport, RunMetrics};
use crate::model::EvalBranch;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: VariantKind,
    pub task: String,
    pub seed: u64,
    pub epochs: usize,
    pub steps: u64,
    pub best_epoch: Option<usize>,
    pub best_val_auc: Option<f64>,
    pub final_loss: Option<f64>,
    pub final_val: Option<RunMetrics>,
    pub seconds: f64,
}

impl TrainSummary {
    fn of(t: &Trainer, seconds: f64) -> Self {
        TrainSummary {
            variant: t.cfg.variant,
            task: t.data.task.name().to_string(),
            seed: t.cfg.seed,
            epochs: t.epoch,
            steps: t.step,
            best_epoch: t.best.map(|b| b.0),
            best_val_auc: t.best.map(|b| b.1),
            final_loss: t.history.last().map(|h| h.loss.l_total),
            final_val: t.history.last().and_then(|h| h.val),
            seconds,
        }
    }
}

/// Loads the manifest a run config names, at the model's input length.
pub fn load_for(cfg: &RunConfig) -> Result<Dataset> {
    load_dataset(cfg.manifest()?, cfg.model.input_length)
}

/// Trains on folds 1-8, selects by fold-9 macro-AUC and writes `config.json`,
/// `metrics.csv`, `steps.csv`, `summary.json` and `checkpoints/{best,last}`
/// under `cfg.out`. With `resume`, continues from `checkpoints/last` there.
/// Inputs are validated before anything is written.
pub fn cmd_train(cfg: &RunConfig, data: Dataset, resume: bool, on_step: &mut dyn FnMut(&StepLog)) -> Result<(Trainer, TrainSummary)> {
    let files = RunFiles::new(&cfg.out);
    let mut t = if resume {
        Trainer::resume(cfg.clone(), data, &files.last(), Some(&files.best()))?
    } else {
        Trainer::new(cfg.clone(), data)?
    };
    files.create()?;
    write_json(&cfg.out.join("config.json"), &t.cfg)?;
    let seconds = fit(&mut t, Some(&files), on_step)?;
    let summary = TrainSummary::of(&t, seconds);
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok((t, summary))
}

/// Scores one split with a saved checkpoint.
pub fn cmd_eval(checkpoint: &Path, manifest: &Path, split: Split, branch: EvalBranch) -> Result<MetricsReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let data = load_dataset(manifest, ck.meta.model.input_length)?;
    if data.vocabulary != ck.meta.vocabulary {
        return Err(config_err(format!(
            "vocabulary mismatch: checkpoint has {} labels {:?}, manifest has {} labels {:?}",
            ck.meta.vocabulary.len(),
            ck.meta.vocabulary,
            data.vocabulary.len(),
            data.vocabulary
        )));
    }
    let splits = split_folds(&data);
    let mut model = ck.model;
    evaluate_split(&mut model, &data, splits.get(split), 64, branch, ck.meta.seed)
}

/// One row of an ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub aggregate: Aggregate,
    pub runs: Vec<MetricsReport>,
}

pub const ABLATION_HEADER: [&str; 4] = ["variant", "AUC", "Accuracy", "F1"];

/// Trains every `kind` for every seed on the same data, scores `split` with
/// the validation-selected model, and writes `ablation.csv` under `cfg.out`.
pub fn cmd_ablate(cfg: &RunConfig, data: &Dataset, kinds: &[VariantKind], seeds: &[u64], split: Split) -> Result<Vec<AblationRow>> {
    if kinds.is_empty() || seeds.is_empty() {
        return Err(config_err("ablation needs at least one variant and one seed"));
    }
    // Reject bad configs before spending time on the first variant.
    for &kind in kinds {
        Trainer::new(
            RunConfig {
                variant: kind,
                epochs: 1,
                ..cfg.clone()
            },
            data.clone(),
        )?;
    }
    let mut rows = Vec::new();
    for &kind in kinds {
        let mut runs = Vec::new();
        for &seed in seeds {
            let run = RunConfig {
                variant: kind,
                seed,
                out: cfg.out.join(kind.name()).join(format!("seed{seed}")),
                ..cfg.clone()
            };
            let (t, _) = cmd_train(&run, data.clone(), false, &mut |_| {})?;
            let mut model = t.selected_model().clone();
            let idx = t.splits.get(split).to_vec();
            runs.push(evaluate_split(&mut model, &t.data, &idx, t.cfg.batch_size, EvalBranch::Ensemble, seed)?);
        }
        rows.push(AblationRow {
            aggregate: aggregate_runs(&runs)?,
            runs,
        });
    }
    write_ablation_csv(&cfg.out.join("ablation.csv"), &rows)?;
    Ok(rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(ABLATION_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let a = &r.aggregate;
        w.write_record([a.variant.clone(), a.macro_auc.cell(), a.accuracy.cell(), a.macro_f1.cell()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Axes of a hyperparameter grid. Empty axes fall back to the base config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// `(low_channels, high_channels)` pairs.
    pub channels: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub low_channels: usize,
    pub high_channels: usize,
}

impl SweepGrid {
    pub fn points(&self, base: &RunConfig) -> Vec<SweepPoint> {
        let m = &base.model;
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let channels = if self.channels.is_empty() {
            vec![(m.low_channels, m.high_channels)]
        } else {
            self.channels.clone()
        };
        let mut out = Vec::new();
        for &alpha in &or(&self.alpha, m.alpha) {
            for &beta in &or(&self.beta, m.beta) {
                for &gamma in &or(&self.gamma, m.gamma) {
                    for &(low_channels, high_channels) in &channels {
                        out.push(SweepPoint {
                            alpha,
                            beta,
                            gamma,
                            low_channels,
                            high_channels,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub val_auc: f64,
    pub seconds: f64,
}

/// `"1m30s"`.
pub fn format_duration(seconds: f64) -> String {
    let s = seconds.round() as u64;
    format!("{}m{}s", s / 60, s % 60)
}

/// Best first; ties broken by the grid values in lexicographic order.
pub fn sort_sweep(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| {
        let key = |r: &SweepRow| (r.point.alpha, r.point.beta, r.point.gamma, r.point.low_channels, r.point.high_channels);
        let (ka, kb) = (key(a), key(b));
        b.val_auc
            .total_cmp(&a.val_auc)
            .then(ka.0.total_cmp(&kb.0))
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.total_cmp(&kb.2))
            .then(ka.3.cmp(&kb.3))
            .then(ka.4.cmp(&kb.4))
    });
}

pub const SWEEP_HEADER: [&str; 8] = ["alpha", "beta", "gamma", "low_channels", "high_channels", "val_auc", "time", "seconds"];

/// One training run per grid point, in grid order; writes `sweep.csv`.
pub fn cmd_sweep(cfg: &RunConfig, data: &Dataset, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    let points = grid.points(cfg);
    let configured = |i: usize, p: &SweepPoint| {
        let mut run = cfg.clone();
        run.model.alpha = p.alpha;
        run.model.beta = p.beta;
        run.model.gamma = p.gamma;
        run.model.low_channels = p.low_channels;
        run.model.high_channels = p.high_channels;
        run.out = cfg.out.join(format!("point{i:03}"));
        run
    };
    for (i, p) in points.iter().enumerate() {
        configured(i, p).validate()?;
    }
    let mut rows = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let (_, summary) = cmd_train(&configured(i, p), data.clone(), false, &mut |_| {})?;
        rows.push(SweepRow {
            point: p.clone(),
            val_auc: summary.best_val_auc.unwrap_or(f64::NAN),
            seconds: summary.seconds,
        });
    }
    write_sweep_csv(&cfg.out.join("sweep.csv"), &rows)?;
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(SWEEP_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let p = &r.point;
        w.write_record([
            p.alpha.to_string(),
            p.beta.to_string(),
            p.gamma.to_string(),
            p.low_channels.to_string(),
            p.high_channels.to_string(),
            format!("{:.4}", r.val_auc),
            format_duration(r.seconds),
            format!("{:.3}", r.seconds),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `dir/eval_<split>_<branch>.json` plus the per-class CSV beside it.
pub fn write_eval(dir: &Path, split: Split, branch: EvalBranch, report: &MetricsReport) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = format!("eval_{}_{}", split_name(split), branch_name(branch));
    let json = dir.join(format!("{stem}.json"));
    write_json(&json, report)?;
    report.write_class_csv(&dir.join(format!("{stem}_classes.csv")))?;
    Ok(json)
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

fn branch_name(b: EvalBranch) -> &'static str {
    match b {
        EvalBranch::Ensemble => "ensemble",
        EvalBranch::Branch1 => "branch1",
        EvalBranch::Branch2 => "branch2",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_cardinality() {
        let grid = SweepGrid {
            alpha: vec![0.01, 0.1, 1.0],
            beta: vec![0.01, 0.1, 1.0],
            gamma: vec![0.01, 0.1, 1.0],
            channels: vec![],
        };
        assert_eq!(grid.points(&RunConfig::default()).len(), 27);
        let ch = SweepGrid {
            channels: vec![(64, 128), (128, 256), (256, 512)],
            ..Default::default()
        };
        assert_eq!(ch.points(&RunConfig::default()).len(), 3);
    }

    #[test]
    fn durations_look_like_table_cells() {
        assert_eq!(format_duration(90.2), "1m30s");
        assert_eq!(format_duration(7.0), "0m7s");
        assert_eq!(format_duration(3599.6), "60m0s");
    }

    #[test]
    fn sweep_sort_breaks_ties_lexicographically() {
        let row = |alpha, low, auc| SweepRow {
            point: SweepPoint {
                alpha,
                beta: 0.01,
                gamma: 0.1,
                low_channels: low,
                high_channels: 2 * low,
            },
            val_auc: auc,
            seconds: 1.0,
        };
        let mut rows = vec![row(0.1, 8, 90.0), row(0.01, 16, 95.0), row(0.01, 8, 95.0), row(1.0, 8, 99.0)];
        sort_sweep(&mut rows);
        let order: Vec<(f64, usize)> = rows.iter().map(|r| (r.point.alpha, r.point.low_channels)).collect();
        assert_eq!(order, vec![(1.0, 8), (0.01, 8), (0.01, 16), (0.1, 8)]);
    }
}
