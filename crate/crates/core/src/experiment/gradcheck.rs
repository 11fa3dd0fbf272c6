use mrm_tensor::gradcheck::{self, OpReport, GRAD_TOL};
use mrm_tensor::{Mode, OpKind, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ModelConfig, VariantKind};
use crate::error::{Error, Result};
use crate::model::loss::total_loss;
use crate::model::Model;

/// Full model small enough to difference every parameter: 2 leads, 32
/// samples, C = 4, 3 classes, attention reduction 2.
pub fn reduced_config() -> ModelConfig {
    ModelConfig {
        num_leads: 2,
        input_length: 32,
        low_channels: 4,
        high_channels: 8,
        stem_channels: vec![4, 4, 4, 4],
        num_classes: 3,
        attention_reduction: 2,
        ..ModelConfig::default()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelCheck {
    pub max_err: f64,
    /// Parameter (or `input`) with the largest error.
    pub worst: String,
    pub checked: usize,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub ops: Vec<OpReport>,
    pub model: ModelCheck,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(OpReport::passed) && self.model.max_err < GRAD_TOL
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .ops
            .iter()
            .filter(|r| !r.passed())
            .map(|r| format!("{} ({:.3e})", r.kind.name(), r.max_err))
            .collect();
        if self.model.max_err >= GRAD_TOL {
            out.push(format!("full model at {} ({:.3e})", self.model.worst, self.model.max_err));
        }
        out
    }
}

fn to_tensor_err(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::InvalidArgument {
            op: "model",
            msg: other.to_string(),
        },
    }
}

/// Differences the total training loss of the reduced dual-branch model
/// with respect to every parameter and the input.
pub fn check_model(fault: Option<OpKind>, seed: u64) -> Result<ModelCheck> {
    let cfg = reduced_config();
    let mut model = Model::<f64>::new(cfg.clone(), VariantKind::Mrm, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let b = 3;
    let x = Tensor::from_fn([b, cfg.num_leads, cfg.input_length], |_| rng.random_range(-1.0..1.0));
    let y = Tensor::from_fn([b, cfg.num_classes], |_| f64::from(u8::from(rng.random_bool(0.5))));
    let mut inputs: Vec<Tensor<f64>> = model.params.values().to_vec();
    inputs.push(x);
    let np = model.params.len();
    let report = gradcheck::check(&inputs, fault, |g, vars| {
        let out = model.forward(g, &vars[..np], vars[np], Mode::Train, seed, 0).map_err(to_tensor_err)?;
        let (loss, _) = total_loss(g, &out, &y, &cfg).map_err(to_tensor_err)?;
        Ok(loss)
    })?;
    let (i, &max_err) = report
        .worst
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("model has parameters");
    let worst = if i < np { model.params.name(i).to_string() } else { "input".into() };
    Ok(ModelCheck {
        max_err,
        worst,
        checked: report.checked,
    })
}

/// Every differentiable op plus the reduced full model.
pub fn run_gradcheck(fault: Option<OpKind>, seed: u64) -> Result<GradcheckReport> {
    Ok(GradcheckReport {
        ops: gradcheck::op_suite(fault, seed)?,
        model: check_model(fault, seed)?,
    })
}
