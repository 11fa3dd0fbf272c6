//! Multi-label evaluation. Inputs are `[S, K]` score and multi-hot label
//! matrices; results are percentages.

use std::io::Write;
use std::path::Path;

use mrm_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

pub const THRESHOLD: f64 = 0.5;

/// Column-major view of an `[S, K]` matrix as f64 columns.
fn columns<S: Scalar>(t: &Tensor<S>) -> Vec<Vec<f64>> {
    let k = t.dim(1);
    (0..k).map(|c| t.data().iter().skip(c).step_by(k).map(|v| v.f64()).collect()).collect()
}

fn check_pair<S: Scalar>(scores: &Tensor<S>, labels: &Tensor<S>) -> Result<(usize, usize)> {
    if scores.rank() != 2 || scores.shape() != labels.shape() {
        return Err(config_err(format!(
            "scores {:?} and labels {:?} must both be [S, K]",
            scores.shape(),
            labels.shape()
        )));
    }
    if labels.data().iter().any(|&v| v != S::zero() && v != S::one()) {
        return Err(config_err("labels must be multi-hot (0 or 1)"));
    }
    Ok((scores.dim(0), scores.dim(1)))
}

/// ROC-AUC of one class through the midrank rank-sum; `None` when the class
/// lacks positives or negatives.
pub fn class_auc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let pos = labels.iter().filter(|&&y| y > 0.5).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean.
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&o| labels[o] > 0.5).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    /// Percent, over non-degenerate classes.
    pub macro_auc: f64,
    /// Fraction in `[0, 1]` per class; `None` for skipped classes.
    pub per_class: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
}

pub fn auc_report<S: Scalar>(scores: &Tensor<S>, labels: &Tensor<S>) -> Result<AucReport> {
    let (s, _) = check_pair(scores, labels)?;
    if s < 2 {
        return Err(config_err("AUC needs at least 2 samples"));
    }
    let per_class: Vec<Option<f64>> =
        columns(scores).iter().zip(columns(labels)).map(|(sc, y)| class_auc(sc, &y)).collect();
    let skipped: Vec<usize> = (0..per_class.len()).filter(|&c| per_class[c].is_none()).collect();
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(config_err("every class lacks positives or negatives; AUC is undefined"));
    }
    if !skipped.is_empty() {
        log::warn!("AUC skipped {} degenerate classes: {skipped:?}", skipped.len());
    }
    Ok(AucReport {
        macro_auc: 100.0 * valid.iter().sum::<f64>() / valid.len() as f64,
        per_class,
        skipped,
    })
}

pub fn macro_auc<S: Scalar>(scores: &Tensor<S>, labels: &Tensor<S>) -> Result<f64> {
    Ok(auc_report(scores, labels)?.macro_auc)
}

/// `2TP / (2TP + FP + FN)` per class; 0 when the denominator is.
pub fn per_class_f1<S: Scalar>(scores: &Tensor<S>, labels: &Tensor<S>, threshold: f64) -> Result<Vec<f64>> {
    check_pair(scores, labels)?;
    Ok(columns(scores)
        .iter()
        .zip(columns(labels))
        .map(|(sc, y)| {
            let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
            for (&s, &y) in sc.iter().zip(&y) {
                match (s >= threshold, y > 0.5) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
            let denom = 2 * tp + fp + fneg;
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .collect())
}

pub fn macro_f1<S: Scalar>(scores: &Tensor<S>, labels: &Tensor<S>, threshold: f64) -> Result<f64> {
    let f1 = per_class_f1(scores, labels, threshold)?;
    if f1.is_empty() {
        return Err(config_err("no classes"));
    }
    Ok(100.0 * f1.iter().sum::<f64>() / f1.len() as f64)
}

/// Fraction of correct thresholded decisions over all `S x K` slots.
pub fn multilabel_accuracy<S: Scalar>(scores: &Tensor<S>, labels: &Tensor<S>, threshold: f64) -> Result<f64> {
    check_pair(scores, labels)?;
    let n = scores.numel();
    if n == 0 {
        return Err(config_err("no label slots"));
    }
    let correct = scores
        .data()
        .iter()
        .zip(labels.data())
        .filter(|(s, y)| (s.f64() >= threshold) == (y.f64() > 0.5))
        .count();
    Ok(100.0 * correct as f64 / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `matrix[true][predicted]`, each occurring row summing to 1.
    pub matrix: Vec<Vec<f64>>,
    /// Samples without any true label.
    pub skipped: usize,
}

/// Argmax prediction per sample (ties to the lowest class), counted once per
/// true label, rows normalized by true-label totals.
pub fn confusion_matrix<S: Scalar>(scores: &Tensor<S>, labels: &Tensor<S>) -> Result<ConfusionMatrix> {
    let (_, k) = check_pair(scores, labels)?;
    let mut counts = vec![vec![0.0; k]; k];
    let mut skipped = 0;
    for (sc, y) in scores.data().chunks(k).zip(labels.data().chunks(k)) {
        if !y.iter().any(|&v| v == S::one()) {
            skipped += 1;
            continue;
        }
        let mut pred = 0;
        for c in 1..k {
            if sc[c] > sc[pred] {
                pred = c;
            }
        }
        for t in (0..k).filter(|&t| y[t] == S::one()) {
            counts[t][pred] += 1.0;
        }
    }
    if skipped > 0 {
        log::warn!("confusion matrix skipped {skipped} samples with no true label");
    }
    for row in &mut counts {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    Ok(ConfusionMatrix { matrix: counts, skipped })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub macro_auc: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    /// Percent; absent for degenerate classes.
    pub auc: Option<f64>,
    pub f1: f64,
    pub positives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub variant: String,
    pub seed: u64,
    pub samples: usize,
    pub metrics: RunMetrics,
    pub per_class: Vec<ClassMetrics>,
}

/// All metrics for one run.
pub fn evaluate<S: Scalar>(scores: &Tensor<S>, labels: &Tensor<S>, vocabulary: &[String]) -> Result<RunReportParts> {
    let (s, k) = check_pair(scores, labels)?;
    if vocabulary.len() != k {
        return Err(config_err(format!("{k} score columns for {} labels", vocabulary.len())));
    }
    let auc = auc_report(scores, labels)?;
    let f1 = per_class_f1(scores, labels, THRESHOLD)?;
    let metrics = RunMetrics {
        macro_auc: auc.macro_auc,
        macro_f1: macro_f1(scores, labels, THRESHOLD)?,
        accuracy: multilabel_accuracy(scores, labels, THRESHOLD)?,
    };
    let per_class = (0..k)
        .map(|c| ClassMetrics {
            label: vocabulary[c].clone(),
            auc: auc.per_class[c].map(|a| 100.0 * a),
            f1: 100.0 * f1[c],
            positives: labels.data().iter().skip(c).step_by(k).filter(|&&v| v == S::one()).count(),
        })
        .collect();
    Ok(RunReportParts {
        samples: s,
        metrics,
        per_class,
    })
}

/// The data half of a [`MetricsReport`], before run metadata is attached.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReportParts {
    pub samples: usize,
    pub metrics: RunMetrics,
    pub per_class: Vec<ClassMetrics>,
}

impl RunReportParts {
    pub fn into_report(self, task: impl Into<String>, variant: impl Into<String>, seed: u64) -> MetricsReport {
        MetricsReport {
            task: task.into(),
            variant: variant.into(),
            seed,
            samples: self.samples,
            metrics: self.metrics,
            per_class: self.per_class,
        }
    }
}

impl MetricsReport {
    /// Per-class rows: `label,positives,auc,f1`.
    pub fn write_class_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["label", "positives", "auc", "f1"]).map_err(|e| csv_err(path, e))?;
        for c in &self.per_class {
            let auc = c.auc.map_or(String::new(), |a| format!("{a:.4}"));
            w.write_record([c.label.clone(), c.positives.to_string(), auc, format!("{:.4}", c.f1)])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Mean and sample standard deviation (`n - 1`; 0 for a single run).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }

    /// `"93.59±0.19"`.
    pub fn cell(&self) -> String {
        format!("{:.2}±{:.2}", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub task: String,
    pub variant: String,
    pub seeds: Vec<u64>,
    pub macro_auc: Stat,
    pub macro_f1: Stat,
    pub accuracy: Stat,
}

pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<Aggregate> {
    let first = reports.first().ok_or_else(|| config_err("no runs to aggregate"))?;
    if let Some(r) = reports.iter().find(|r| r.task != first.task || r.variant != first.variant) {
        return Err(config_err(format!(
            "cannot aggregate {}/{} with {}/{}",
            first.task, first.variant, r.task, r.variant
        )));
    }
    let pick = |f: fn(&RunMetrics) -> f64| Stat::of(&reports.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>());
    Ok(Aggregate {
        task: first.task.clone(),
        variant: first.variant.clone(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        macro_auc: pick(|m| m.macro_auc),
        macro_f1: pick(|m| m.macro_f1),
        accuracy: pick(|m| m.accuracy),
    })
}

/// Writes `value` as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{text}").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: usize, k: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::new([s, k], v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_and_inverted_rankings() {
        let y = t(4, 2, &[1., 0., 0., 1., 1., 1., 0., 0.]);
        let inv = Tensor::from_fn([4, 2], |i| 1.0 - y.data()[i]);
        assert_eq!(macro_auc(&y, &y).unwrap(), 100.0);
        assert_eq!(macro_auc(&inv, &y).unwrap(), 0.0);
    }

    #[test]
    fn ties_count_half() {
        let s = t(4, 1, &[0.5, 0.5, 0.5, 0.5]);
        let y = t(4, 1, &[1., 0., 1., 0.]);
        assert_eq!(macro_auc(&s, &y).unwrap(), 50.0);
    }

    #[test]
    fn degenerate_classes_are_skipped_or_fatal() {
        let s = t(3, 2, &[0.1, 0.2, 0.9, 0.3, 0.4, 0.5]);
        let y = t(3, 2, &[0., 1., 1., 1., 0., 1.]);
        let r = auc_report(&s, &y).unwrap();
        assert_eq!(r.skipped, vec![1]);
        assert_eq!(r.per_class[1], None);
        let all_pos = t(3, 2, &[1.; 6]);
        assert!(macro_auc(&s, &all_pos).is_err());
    }

    #[test]
    fn f1_cases() {
        let y = t(3, 2, &[1., 0., 0., 1., 1., 0.]);
        assert_eq!(macro_f1(&y, &y, 0.5).unwrap(), 100.0);
        let none = t(3, 2, &[0.; 6]);
        assert_eq!(per_class_f1(&none, &y, 0.5).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn accuracy_counts_slots() {
        let y = t(2, 2, &[1., 0., 0., 1.]);
        assert_eq!(multilabel_accuracy(&y, &y, 0.5).unwrap(), 100.0);
        let half = t(2, 2, &[1., 1., 1., 1.]);
        assert_eq!(multilabel_accuracy(&half, &y, 0.5).unwrap(), 50.0);
    }

    #[test]
    fn confusion_identity_for_perfect_single_label() {
        let y = t(3, 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let m = confusion_matrix(&y, &y).unwrap();
        assert_eq!(m.matrix, vec![vec![1., 0., 0.], vec![0., 1., 0.], vec![0., 0., 1.]]);
    }

    #[test]
    fn confusion_hand_tally() {
        // argmax: 0, 1, 0 (tie 0/1 -> 0), 2, 2, 1
        let s = t(
            6,
            3,
            &[0.9, 0.1, 0.0, 0.2, 0.7, 0.1, 0.4, 0.4, 0.2, 0.1, 0.1, 0.8, 0.3, 0.3, 0.4, 0.1, 0.6, 0.3],
        );
        let y = t(6, 3, &[1., 0., 0., 0., 1., 0., 0., 1., 0., 0., 0., 1., 1., 0., 1., 0., 0., 0.]);
        let m = confusion_matrix(&s, &y).unwrap();
        assert_eq!(m.skipped, 1);
        // true 0: preds {0, 2}; true 1: preds {1, 0}; true 2: preds {2, 2}
        assert_eq!(m.matrix[0], vec![0.5, 0.0, 0.5]);
        assert_eq!(m.matrix[1], vec![0.5, 0.5, 0.0]);
        assert_eq!(m.matrix[2], vec![0.0, 0.0, 1.0]);
    }

    fn report(seed: u64, auc: f64) -> MetricsReport {
        MetricsReport {
            task: "all".into(),
            variant: "mrm".into(),
            seed,
            samples: 1,
            metrics: RunMetrics {
                macro_auc: auc,
                macro_f1: 70.0,
                accuracy: 97.0,
            },
            per_class: vec![],
        }
    }

    #[test]
    fn aggregation_statistics() {
        let one = aggregate_runs(&[report(0, 93.4)]).unwrap();
        assert_eq!(one.macro_auc.cell(), "93.40±0.00");
        let two = aggregate_runs(&[report(0, 93.4), report(1, 93.8)]).unwrap();
        assert!((two.macro_auc.mean - 93.6).abs() < 1e-12);
        assert!((two.macro_auc.std - 0.2f64.hypot(0.2)).abs() < 1e-12);
        assert_eq!(two.macro_auc.cell(), "93.60±0.28");
        assert_eq!(Stat { mean: 93.59, std: 0.19 }.cell(), "93.59±0.19");
    }

    #[test]
    fn aggregation_rejects_mixed_tasks() {
        let mut other = report(1, 90.0);
        other.task = "cpsc".into();
        assert!(aggregate_runs(&[report(0, 93.4), other]).is_err());
        assert!(aggregate_runs(&[]).is_err());
    }
}
