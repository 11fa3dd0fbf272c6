use std::f64::consts::TAU;

use mrm_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, EcgRecord, Task, NUM_FOLDS, NUM_LEADS};
use crate::error::{config_err, Result};

pub const MAX_CLASSES: usize = 16;
const SPIKE_PERIOD: usize = 40;
const SPIKE_SIGMA: f64 = 2.0;
const SPIKE_HEIGHT: f64 = 1.5;
const LABEL_RATE: f64 = 0.35;
const LEADS_PER_CLASS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_records: usize,
    pub num_classes: usize,
    pub seed: u64,
    /// 1 is noiseless; noise std is `3 (1 - separability)`.
    pub separability: f64,
    /// Samples per lead at 100 Hz.
    pub length: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_records: 640,
            num_classes: 5,
            seed: 0,
            separability: 0.8,
            length: 1000,
        }
    }
}

/// Sinusoid frequency of class `k`, in Hz.
pub fn class_frequency(k: usize) -> f64 {
    2.0 + 3.0 * k as f64
}

/// Leads carrying class `k`'s signature.
pub fn class_leads(k: usize) -> [usize; LEADS_PER_CLASS] {
    std::array::from_fn(|j| (k + 4 * j) % NUM_LEADS)
}

/// Multi-label records where class `k` adds a `(2 + 3k)` Hz sinusoid on three
/// leads, plus a Gaussian spike train for odd `k`. Folds are round-robin.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.num_classes == 0 || cfg.num_classes > MAX_CLASSES {
        return Err(config_err(format!("num_classes must be in 1..={MAX_CLASSES}, got {}", cfg.num_classes)));
    }
    if !(0.0..=1.0).contains(&cfg.separability) {
        return Err(config_err(format!("separability must be in [0, 1], got {}", cfg.separability)));
    }
    if cfg.length < 2 {
        return Err(config_err("length must be at least 2"));
    }
    let noise = 3.0 * (1.0 - cfg.separability);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.length;
    let mut records = Vec::with_capacity(cfg.num_records);
    for i in 0..cfg.num_records {
        let mut labels: Vec<f32> = (0..cfg.num_classes).map(|_| f32::from(rng.random_bool(LABEL_RATE))).collect();
        if labels.iter().all(|&v| v == 0.0) {
            labels[rng.random_range(0..cfg.num_classes)] = 1.0;
        }
        let mut sig = vec![0.0f64; NUM_LEADS * n];
        for k in (0..cfg.num_classes).filter(|&k| labels[k] > 0.0) {
            let phase = rng.random_range(0.0..TAU);
            let offset = rng.random_range(0..SPIKE_PERIOD) as f64;
            let w = TAU * class_frequency(k) / 100.0;
            for lead in class_leads(k) {
                let row = &mut sig[lead * n..(lead + 1) * n];
                for (t, v) in row.iter_mut().enumerate() {
                    *v += (w * t as f64 + phase).sin();
                    if k % 2 == 1 {
                        *v += spike(t as f64, offset);
                    }
                }
            }
        }
        if noise > 0.0 {
            for v in &mut sig {
                *v += noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        records.push(EcgRecord {
            id: format!("syn{i:05}"),
            signal: Tensor::new([NUM_LEADS, n], sig.into_iter().map(|v| v as f32).collect())?,
            labels,
            fold: (i % NUM_FOLDS as usize) as u8 + 1,
        });
    }
    Ok(Dataset {
        task: Task::Synthetic,
        vocabulary: (0..cfg.num_classes).map(|k| format!("class{k}")).collect(),
        records,
    })
}

/// Pulse train value at `t`: nearest pulse centred on `offset + m * period`.
fn spike(t: f64, offset: f64) -> f64 {
    let p = SPIKE_PERIOD as f64;
    let d = (t - offset).rem_euclid(p);
    let d = d.min(p - d);
    SPIKE_HEIGHT * (-0.5 * (d / SPIKE_SIGMA).powi(2)).exp()
}
