//! Batch and layer normalization.
//!
//! Statistics are accumulated in `f64` regardless of the element type.

use super::as_bcl;
use crate::error::{arg_err, shape_err, Result};
use crate::graph::{Contribs, Op};
use crate::{Graph, Scalar, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

/// Train uses batch statistics and live dropout; Eval uses running statistics
/// and disables dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running mean/variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
    pub momentum: f64,
}

impl<S: Scalar> RunningStats<S> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![S::zero(); channels],
            var: vec![S::one(); channels],
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn update(&mut self, mean: &[f64], unbiased_var: &[f64]) {
        let m = self.momentum;
        for c in 0..self.mean.len() {
            self.mean[c] = S::of((1.0 - m) * self.mean[c].f64() + m * mean[c]);
            self.var[c] = S::of((1.0 - m) * self.var[c].f64() + m * unbiased_var[c]);
        }
    }
}

impl<S: Scalar> Graph<S> {
    /// Per-channel normalization of `[B, C, L]` (or `[B, C]`) input.
    ///
    /// In train mode the batch statistics normalize the input and the running
    /// statistics move toward them by `stats.momentum`.
    pub fn batchnorm1d(&mut self, input: Var, gamma: Var, beta: Var, stats: &mut RunningStats<S>, mode: Mode) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let (b, c, len) = match xs[..] {
            [b, c] => (b, c, 1),
            [b, c, l] => (b, c, l),
            _ => return Err(shape_err("batchnorm1d", format!("input must be [B,C] or [B,C,L], got {xs:?}"))),
        };
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(shape_err("batchnorm1d", format!("{name} {:?} does not match C={c}", self.shape(v))));
            }
        }
        if stats.channels() != c {
            return Err(shape_err("batchnorm1d", format!("running stats track {} channels, input has {c}", stats.channels())));
        }
        let x = self.value(input).data();
        let gw = self.value(gamma).data();
        let bw = self.value(beta).data();
        let n = b * len;
        let idx = |bi: usize, ci: usize, t: usize| (bi * c + ci) * len + t;

        let mut out = vec![S::zero(); x.len()];
        let (mean, inv_std, batch_stats) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(arg_err("batchnorm1d", format!("train mode needs B*L >= 2, got {n}")));
                }
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for ci in 0..c {
                    let mut s = 0.0;
                    for bi in 0..b {
                        for t in 0..len {
                            s += x[idx(bi, ci, t)].f64();
                        }
                    }
                    let m = s / n as f64;
                    let mut ss = 0.0;
                    for bi in 0..b {
                        for t in 0..len {
                            let d = x[idx(bi, ci, t)].f64() - m;
                            ss += d * d;
                        }
                    }
                    mean[ci] = m;
                    var[ci] = ss / n as f64;
                }
                let unbiased: Vec<f64> = var.iter().map(|v| v * n as f64 / (n - 1) as f64).collect();
                stats.update(&mean, &unbiased);
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                (mean, inv, true)
            }
            Mode::Eval => {
                let mean = stats.mean.iter().map(|v| v.f64()).collect();
                let inv = stats.var.iter().map(|v| 1.0 / (v.f64() + BN_EPS).sqrt()).collect();
                (mean, inv, false)
            }
        };

        let mut xh = vec![S::zero(); x.len()];
        for bi in 0..b {
            for ci in 0..c {
                for t in 0..len {
                    let i = idx(bi, ci, t);
                    let h = (x[i].f64() - mean[ci]) * inv_std[ci];
                    xh[i] = S::of(h);
                    out[i] = S::of(gw[ci].f64() * h + bw[ci].f64());
                }
            }
        }
        let op = Op::BatchNorm1d {
            input,
            gamma,
            beta,
            xhat: xh,
            inv_std: inv_std.into_iter().map(S::of).collect(),
            batch_stats,
        };
        self.push(Tensor::new(xs, out)?, op)
    }

    /// Normalizes each sample over the trailing dims given by `gamma`'s shape.
    pub fn layernorm(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let gs = self.shape(gamma).to_vec();
        if self.shape(beta) != gs.as_slice() {
            return Err(shape_err("layernorm", format!("beta {:?} differs from gamma {gs:?}", self.shape(beta))));
        }
        if gs.is_empty() || gs.len() > xs.len() || xs[xs.len() - gs.len()..] != gs[..] {
            return Err(shape_err("layernorm", format!("gamma {gs:?} is not a trailing shape of input {xs:?}")));
        }
        let d: usize = gs.iter().product();
        let x = self.value(input).data();
        let gw = self.value(gamma).data();
        let bw = self.value(beta).data();
        let rows = x.len() / d;
        let mut out = vec![S::zero(); x.len()];
        let mut xhat = vec![S::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().map(|v| v.f64()).sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for j in 0..d {
                let h = (row[j].f64() - mean) * inv;
                xhat[r * d + j] = S::of(h);
                out[r * d + j] = S::of(gw[j].f64() * h + bw[j].f64());
            }
            inv_std.push(S::of(inv));
        }
        let op = Op::LayerNorm {
            input,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        self.push(Tensor::new(xs, out)?, op)
    }
}

pub(crate) fn batchnorm_backward<S: Scalar>(
    g: &Graph<S>,
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: &[S],
    inv_std: &[S],
    batch_stats: bool,
    grad: &[S],
) -> Contribs<S> {
    let xs = g.shape(input);
    let (b, c, len) = match *xs {
        [b, c] => (b, c, 1),
        _ => as_bcl(xs).expect("validated in forward"),
    };
    let gw = g.value(gamma).data();
    let n = (b * len) as f64;
    let idx = |bi: usize, ci: usize, t: usize| (bi * c + ci) * len + t;

    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    let mut sum_dxhat = vec![0.0f64; c];
    let mut sum_dxhat_xhat = vec![0.0f64; c];
    for bi in 0..b {
        for ci in 0..c {
            for t in 0..len {
                let i = idx(bi, ci, t);
                let gv = grad[i].f64();
                let h = xhat[i].f64();
                dgamma[ci] += gv * h;
                dbeta[ci] += gv;
                let dh = gv * gw[ci].f64();
                sum_dxhat[ci] += dh;
                sum_dxhat_xhat[ci] += dh * h;
            }
        }
    }

    let mut out = Vec::with_capacity(3);
    if g.requires_grad(input) {
        let mut dx = vec![S::zero(); grad.len()];
        for bi in 0..b {
            for ci in 0..c {
                let inv = inv_std[ci].f64();
                for t in 0..len {
                    let i = idx(bi, ci, t);
                    let dh = grad[i].f64() * gw[ci].f64();
                    let v = if batch_stats {
                        inv / n * (n * dh - sum_dxhat[ci] - xhat[i].f64() * sum_dxhat_xhat[ci])
                    } else {
                        dh * inv
                    };
                    dx[i] = S::of(v);
                }
            }
        }
        out.push((input, dx));
    }
    out.push((gamma, dgamma.into_iter().map(S::of).collect()));
    out.push((beta, dbeta.into_iter().map(S::of).collect()));
    out
}

pub(crate) fn layernorm_backward<S: Scalar>(
    g: &Graph<S>,
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: &[S],
    inv_std: &[S],
    grad: &[S],
) -> Contribs<S> {
    let gw = g.value(gamma).data();
    let d = gw.len();
    let rows = grad.len() / d;
    let mut dgamma = vec![0.0f64; d];
    let mut dbeta = vec![0.0f64; d];
    let mut dx = vec![S::zero(); grad.len()];
    for r in 0..rows {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for j in 0..d {
            let i = r * d + j;
            let gv = grad[i].f64();
            let h = xhat[i].f64();
            dgamma[j] += gv * h;
            dbeta[j] += gv;
            let dh = gv * gw[j].f64();
            s1 += dh;
            s2 += dh * h;
        }
        let inv = inv_std[r].f64();
        let n = d as f64;
        for j in 0..d {
            let i = r * d + j;
            let dh = grad[i].f64() * gw[j].f64();
            dx[i] = S::of(inv / n * (n * dh - s1 - xhat[i].f64() * s2));
        }
    }
    vec![
        (input, dx),
        (gamma, dgamma.into_iter().map(S::of).collect()),
        (beta, dbeta.into_iter().map(S::of).collect()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel_moments(data: &[f64], b: usize, c: usize, l: usize, ci: usize) -> (f64, f64) {
        let vals: Vec<f64> = (0..b).flat_map(|bi| (0..l).map(move |t| (bi, t))).map(|(bi, t)| data[(bi * c + ci) * l + t]).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let (b, c, l) = (4, 3, 8);
        let x: Vec<f64> = (0..b * c * l).map(|i| ((i * 37 % 19) as f64) * 0.7 - 3.0 + (i % 3) as f64 * 5.0).collect();
        let mut g = Graph::<f64>::new();
        let xv = g.constant(Tensor::new([b, c, l], x).unwrap());
        let gamma = g.constant(Tensor::ones([c]));
        let beta = g.constant(Tensor::zeros([c]));
        let mut stats = RunningStats::new(c);
        let y = g.batchnorm1d(xv, gamma, beta, &mut stats, Mode::Train).unwrap();
        let out = g.value(y).data().to_vec();
        for ci in 0..c {
            let (m, v) = channel_moments(&out, b, c, l, ci);
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-5, "var {v}");
        }
    }

    #[test]
    fn affine_parameters_set_mean_and_std() {
        let (b, c, l) = (2, 2, 5);
        let x: Vec<f64> = (0..b * c * l).map(|i| (i as f64 * 1.3).sin()).collect();
        let mut g = Graph::<f64>::new();
        let xv = g.constant(Tensor::new([b, c, l], x).unwrap());
        let gamma = g.constant(Tensor::full([c], 2.0));
        let beta = g.constant(Tensor::full([c], 3.0));
        let mut stats = RunningStats::new(c);
        let y = g.batchnorm1d(xv, gamma, beta, &mut stats, Mode::Train).unwrap();
        let out = g.value(y).data().to_vec();
        for ci in 0..c {
            let (m, v) = channel_moments(&out, b, c, l, ci);
            assert!((m - 3.0).abs() < 1e-9);
            assert!((v.sqrt() - 2.0).abs() < 1e-4);
        }
    }

    #[test]
    fn running_stats_follow_momentum_and_drive_eval() {
        let mut g = Graph::<f64>::new();
        let xv = g.constant(Tensor::new([2, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let gamma = g.constant(Tensor::ones([1]));
        let beta = g.constant(Tensor::zeros([1]));
        let mut stats = RunningStats::new(1);
        g.batchnorm1d(xv, gamma, beta, &mut stats, Mode::Train).unwrap();
        // batch mean 4, unbiased var 20/3
        assert!((stats.mean[0] - 0.4).abs() < 1e-12);
        assert!((stats.var[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
        let y = g.batchnorm1d(xv, gamma, beta, &mut stats, Mode::Eval).unwrap();
        let want = (1.0 - 0.4) / (stats.var[0] + BN_EPS).sqrt();
        assert!((g.value(y).data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_is_guarded() {
        let mut g = Graph::<f32>::new();
        let xv = g.constant(Tensor::full([2, 1, 3], 4.0));
        let gamma = g.constant(Tensor::ones([1]));
        let beta = g.constant(Tensor::zeros([1]));
        let mut stats = RunningStats::new(1);
        let y = g.batchnorm1d(xv, gamma, beta, &mut stats, Mode::Train).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn train_mode_needs_two_values_per_channel() {
        let mut g = Graph::<f32>::new();
        let xv = g.constant(Tensor::zeros([1, 1, 1]));
        let gamma = g.constant(Tensor::ones([1]));
        let beta = g.constant(Tensor::zeros([1]));
        let mut stats = RunningStats::new(1);
        assert!(g.batchnorm1d(xv, gamma, beta, &mut stats, Mode::Train).is_err());
    }

    #[test]
    fn layernorm_of_constant_is_zero_and_of_ramp_is_standard() {
        let mut g = Graph::<f64>::new();
        let gamma = g.constant(Tensor::ones([3]));
        let beta = g.constant(Tensor::zeros([3]));
        let c = g.constant(Tensor::full([3], 7.0));
        let y = g.layernorm(c, gamma, beta).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));

        let r = g.constant(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.layernorm(r, gamma, beta).unwrap();
        // mean 2, biased var 2/3
        let s = (2.0f64 / 3.0 + LN_EPS).sqrt();
        let want = [-1.0 / s, 0.0, 1.0 / s];
        for (a, b) in g.value(y).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layernorm_rejects_non_trailing_gamma() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros([2, 3]));
        let gamma = g.constant(Tensor::ones([2]));
        let beta = g.constant(Tensor::zeros([2]));
        assert!(g.layernorm(x, gamma, beta).is_err());
    }
}
