use crate::error::{shape_err, Result, TensorError};
use crate::{ParamStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every parameter of one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S = f32> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig, params: &ParamStore<S>) -> Self {
        let zeros = || params.values().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update. `grads[i]` belongs to parameter `i`.
    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &[Option<Tensor<S>>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(shape_err(
                "adam_step",
                format!("{} parameters, {} gradients, {} moment slots", params.len(), grads.len(), self.m.len()),
            ));
        }
        for (i, g) in grads.iter().enumerate() {
            match g {
                None => return Err(TensorError::MissingGradient(params.name(i).to_string())),
                Some(g) if g.shape() != params.value(i).shape() => {
                    return Err(shape_err(
                        "adam_step",
                        format!("gradient {:?} for `{}` has shape {:?}", g.shape(), params.name(i), params.value(i).shape()),
                    ))
                }
                _ => {}
            }
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (S::of(beta1), S::of(beta2));
        let (ob1, ob2) = (S::of(1.0 - beta1), S::of(1.0 - beta2));
        let step = S::of(lr / c1);
        let (sc2, eps) = (S::of(c2.sqrt().recip()), S::of(eps));
        for (i, g) in grads.iter().enumerate() {
            let g = g.as_ref().unwrap().data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.value_mut(i).data_mut();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + ob1 * g[j];
                v[j] = b2 * v[j] + ob2 * g[j] * g[j];
                p[j] -= step * m[j] / (v[j].sqrt() * sc2 + eps);
            }
        }
        Ok(())
    }
}
