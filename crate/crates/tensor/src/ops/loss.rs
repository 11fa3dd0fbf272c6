use super::pointwise::sigmoid;
use crate::error::{arg_err, shape_err, Result};
use crate::graph::{Contribs, Op};
use crate::{Graph, Scalar, Tensor, Var};

/// Floor applied to probabilities before taking logs.
pub const KL_EPS: f64 = 1e-12;
/// How far a row of a distribution may sum away from 1.
pub const DIST_TOL: f64 = 1e-6;

fn check_distribution<S: Scalar>(op: &'static str, name: &str, t: &Tensor<S>) -> Result<usize> {
    let d = *t.shape().last().ok_or_else(|| shape_err(op, format!("{name} must have rank >= 1")))?;
    if d == 0 || t.numel() == 0 {
        return Err(arg_err(op, format!("{name} is empty")));
    }
    for (r, row) in t.data().chunks(d).enumerate() {
        if row.iter().any(|&v| v < S::zero()) {
            return Err(arg_err(op, format!("{name} row {r} has a negative entry")));
        }
        let total: f64 = row.iter().map(|v| v.f64()).sum();
        if (total - 1.0).abs() > DIST_TOL {
            return Err(arg_err(op, format!("{name} row {r} sums to {total}, not 1")));
        }
    }
    Ok(d)
}

impl<S: Scalar> Graph<S> {
    /// Mean binary cross-entropy on raw logits. Targets must lie in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<S>) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(shape_err(
                "bce_with_logits",
                format!("logits {:?} vs targets {:?}", z.shape(), targets.shape()),
            ));
        }
        if z.numel() == 0 {
            return Err(arg_err("bce_with_logits", "empty batch"));
        }
        if let Some(bad) = targets.data().iter().find(|&&y| !(y >= S::zero() && y <= S::one())) {
            return Err(arg_err("bce_with_logits", format!("target {bad} outside [0, 1]")));
        }
        // max(z, 0) - z*y + ln(1 + e^{-|z|})
        let total: f64 = z
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &y)| {
                let (z, y) = (z.f64(), y.f64());
                z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
            })
            .sum();
        let value = Tensor::scalar(S::of(total / z.numel() as f64));
        self.push(
            value,
            Op::BceWithLogits {
                logits,
                targets: targets.data().to_vec(),
            },
        )
    }

    /// `KL(p || q)` per row of the last axis, averaged over rows. Both inputs
    /// must already be distributions.
    pub fn kl_div(&mut self, p: Var, q: Var) -> Result<Var> {
        if self.shape(p) != self.shape(q) {
            return Err(shape_err("kl_div", format!("p {:?} vs q {:?}", self.shape(p), self.shape(q))));
        }
        let d = check_distribution("kl_div", "p", self.value(p))?;
        check_distribution("kl_div", "q", self.value(q))?;
        let (pv, qv) = (self.value(p).data(), self.value(q).data());
        let rows = pv.len() / d;
        let total: f64 = pv
            .iter()
            .zip(qv)
            .map(|(&a, &b)| {
                let a = a.f64();
                if a <= 0.0 {
                    0.0
                } else {
                    a * (a.max(KL_EPS).ln() - b.f64().max(KL_EPS).ln())
                }
            })
            .sum();
        self.push(Tensor::scalar(S::of(total / rows as f64)), Op::KlDiv { p, q })
    }
}

pub(crate) fn bce_backward<S: Scalar>(g: &Graph<S>, logits: Var, targets: &[S], grad: &[S]) -> Contribs<S> {
    let z = g.value(logits).data();
    let scale = grad[0] / S::of(z.len() as f64);
    let dz = z.iter().zip(targets).map(|(&z, &y)| (sigmoid(z) - y) * scale).collect();
    vec![(logits, dz)]
}

pub(crate) fn kl_backward<S: Scalar>(g: &Graph<S>, p: Var, q: Var, grad: &[S]) -> Contribs<S> {
    let (pv, qv) = (g.value(p).data(), g.value(q).data());
    let d = *g.shape(p).last().unwrap();
    let scale = grad[0].f64() / (pv.len() / d) as f64;
    let mut out = Vec::new();
    if g.requires_grad(p) {
        let dp = pv
            .iter()
            .zip(qv)
            .map(|(&a, &b)| {
                let (a, b) = (a.f64(), b.f64());
                let one = if a > KL_EPS { 1.0 } else { 0.0 };
                S::of(scale * (a.max(KL_EPS).ln() - b.max(KL_EPS).ln() + one))
            })
            .collect();
        out.push((p, dp));
    }
    if g.requires_grad(q) {
        let dq = pv
            .iter()
            .zip(qv)
            .map(|(&a, &b)| {
                let (a, b) = (a.f64(), b.f64());
                if b > KL_EPS {
                    S::of(-scale * a / b)
                } else {
                    S::zero()
                }
            })
            .collect();
        out.push((q, dq));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros([2, 3]));
        let l = g.bce_with_logits(z, &Tensor::ones([2, 3])).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_is_finite_for_huge_logits() {
        let mut g = Graph::<f32>::new();
        let z = g.constant(Tensor::new([2], vec![200.0, -200.0]).unwrap());
        let l = g.bce_with_logits(z, &Tensor::new([2], vec![0.0, 1.0]).unwrap()).unwrap();
        assert!((g.value(l).item() - 200.0).abs() < 1e-3);
    }

    #[test]
    fn bce_rejects_targets_outside_unit_interval() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros([2]));
        assert!(g.bce_with_logits(z, &Tensor::new([2], vec![0.0, 1.5]).unwrap()).is_err());
    }

    #[test]
    fn kl_of_identical_rows_is_zero_and_handles_zeros() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::new([2, 3], vec![0.5, 0.5, 0.0, 0.2, 0.3, 0.5]).unwrap());
        let l = g.kl_div(p, p).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn kl_rejects_unnormalized_rows() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::new([1, 2], vec![0.5, 0.6]).unwrap());
        let q = g.constant(Tensor::new([1, 2], vec![0.5, 0.5]).unwrap());
        let err = g.kl_div(p, q).unwrap_err().to_string();
        assert!(err.contains("sums to"), "{err}");
        let neg = g.constant(Tensor::new([1, 2], vec![1.5, -0.5]).unwrap());
        assert!(g.kl_div(neg, q).is_err());
    }
}
