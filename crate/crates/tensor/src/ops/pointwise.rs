use rand::Rng;

use crate::error::{arg_err, shape_err, Result};
use crate::graph::{Contribs, Op};
use crate::ops::norm::Mode;
use crate::{Graph, Scalar, Tensor, Var};

/// Numerically stable logistic function.
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Strides that map an index of `full` onto `rhs`, where every rhs extent is
/// either equal to the full extent or 1.
fn broadcast_strides(full: &[usize], rhs: &[usize]) -> Option<Vec<usize>> {
    if full.len() != rhs.len() {
        return None;
    }
    let mut strides = vec![0; rhs.len()];
    let mut acc = 1;
    for d in (0..rhs.len()).rev() {
        if rhs[d] == full[d] {
            strides[d] = if rhs[d] == 1 { 0 } else { acc };
        } else if rhs[d] != 1 {
            return None;
        }
        acc *= rhs[d];
    }
    Some(strides)
}

/// Calls `f(full_index, rhs_index)` for every element of `full`.
fn for_each_broadcast(full: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let n: usize = full.iter().product();
    if n == 0 {
        return;
    }
    let rank = full.len();
    let mut idx = vec![0usize; rank];
    let mut j = 0usize;
    for i in 0..n {
        f(i, j);
        for d in (0..rank).rev() {
            idx[d] += 1;
            j += strides[d];
            if idx[d] < full[d] {
                break;
            }
            j -= strides[d] * full[d];
            idx[d] = 0;
        }
    }
}

fn broadcast_check<S: Scalar>(g: &Graph<S>, op: &'static str, lhs: Var, rhs: Var) -> Result<Vec<usize>> {
    let (ls, rs) = (g.shape(lhs), g.shape(rhs));
    broadcast_strides(ls, rs).ok_or_else(|| shape_err(op, format!("cannot broadcast {rs:?} onto {ls:?}")))
}

impl<S: Scalar> Graph<S> {
    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| if v > S::zero() { v } else { S::zero() }).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, Op::Sigmoid { input })
    }

    /// Inverted dropout. In eval mode (or with `p == 0`) this returns `input`
    /// itself, so the output is bit-identical.
    pub fn dropout(&mut self, input: Var, p: f64, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(arg_err("dropout", format!("p must lie in [0, 1), got {p}")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(input);
        }
        let keep = S::of(1.0 / (1.0 - p));
        let x = self.value(input);
        let mask: Vec<S> = (0..x.numel())
            .map(|_| if rng.random::<f64>() >= p { keep } else { S::zero() })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(a, m)| *a * *m).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, Op::Dropout { input, mask })
    }

    /// `lhs + rhs`, with `rhs` broadcast along its unit extents.
    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let strides = broadcast_check(self, "add", lhs, rhs)?;
        let (l, r) = (self.value(lhs), self.value(rhs).data());
        let mut data = l.data().to_vec();
        for_each_broadcast(l.shape(), &strides, |i, j| data[i] += r[j]);
        let value = Tensor::new(l.shape().to_vec(), data)?;
        self.push(value, Op::Add { lhs, rhs })
    }

    /// `lhs * rhs` elementwise, with `rhs` broadcast along its unit extents.
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let strides = broadcast_check(self, "mul", lhs, rhs)?;
        let (l, r) = (self.value(lhs), self.value(rhs).data());
        let mut data = l.data().to_vec();
        for_each_broadcast(l.shape(), &strides, |i, j| data[i] *= r[j]);
        let value = Tensor::new(l.shape().to_vec(), data)?;
        self.push(value, Op::Mul { lhs, rhs })
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let factor = S::of(factor);
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, Op::Scale { input, factor })
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let d = *x.shape().last().unwrap_or(&1);
        if x.numel() == 0 || d == 0 {
            return Err(arg_err("softmax", "empty tensor"));
        }
        let mut data = Vec::with_capacity(x.numel());
        for row in x.data().chunks(d) {
            let m = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
            let exps: Vec<S> = row.iter().map(|&v| (v - m).exp()).collect();
            let total: f64 = exps.iter().map(|e| e.f64()).sum();
            data.extend(exps.iter().map(|e| S::of(e.f64() / total)));
        }
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, Op::Softmax { input })
    }

    /// `sum_i weights[i] * inputs[i]` over equally shaped inputs.
    pub fn weighted_sum(&mut self, inputs: &[Var], weights: Var) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(arg_err("weighted_sum", "no inputs"));
        };
        if self.shape(weights) != [inputs.len()] {
            return Err(shape_err(
                "weighted_sum",
                format!("weights {:?} do not match {} inputs", self.shape(weights), inputs.len()),
            ));
        }
        let shape = self.shape(first).to_vec();
        let w = self.value(weights).data().to_vec();
        let mut data = vec![S::zero(); self.value(first).numel()];
        for (k, &v) in inputs.iter().enumerate() {
            if self.shape(v) != shape.as_slice() {
                return Err(shape_err("weighted_sum", format!("input {:?} differs from {shape:?}", self.shape(v))));
            }
            for (acc, &x) in data.iter_mut().zip(self.value(v).data()) {
                *acc += w[k] * x;
            }
        }
        let value = Tensor::new(shape, data)?;
        self.push(
            value,
            Op::WeightedSum {
                inputs: inputs.to_vec(),
                weights,
            },
        )
    }
}

pub(crate) fn relu_backward<S: Scalar>(g: &Graph<S>, input: Var, grad: &[S]) -> Contribs<S> {
    let x = g.value(input).data();
    let dx = grad
        .iter()
        .zip(x)
        .map(|(&gv, &xv)| if xv > S::zero() { gv } else { S::zero() })
        .collect();
    vec![(input, dx)]
}

pub(crate) fn sigmoid_backward<S: Scalar>(input: Var, out: &Tensor<S>, grad: &[S]) -> Contribs<S> {
    let dx = grad
        .iter()
        .zip(out.data())
        .map(|(&gv, &y)| gv * y * (S::one() - y))
        .collect();
    vec![(input, dx)]
}

pub(crate) fn add_backward<S: Scalar>(g: &Graph<S>, lhs: Var, rhs: Var, grad: &[S]) -> Contribs<S> {
    let full = g.shape(lhs);
    let rs = g.shape(rhs);
    let strides = broadcast_strides(full, rs).expect("validated in forward");
    let mut dr = vec![S::zero(); g.value(rhs).numel()];
    for_each_broadcast(full, &strides, |i, j| dr[j] += grad[i]);
    vec![(lhs, grad.to_vec()), (rhs, dr)]
}

pub(crate) fn mul_backward<S: Scalar>(g: &Graph<S>, lhs: Var, rhs: Var, grad: &[S]) -> Contribs<S> {
    let full = g.shape(lhs);
    let strides = broadcast_strides(full, g.shape(rhs)).expect("validated in forward");
    let (l, r) = (g.value(lhs).data(), g.value(rhs).data());
    let mut dl = vec![S::zero(); l.len()];
    let mut dr = vec![S::zero(); r.len()];
    for_each_broadcast(full, &strides, |i, j| {
        dl[i] = grad[i] * r[j];
        dr[j] += grad[i] * l[i];
    });
    vec![(lhs, dl), (rhs, dr)]
}

pub(crate) fn softmax_backward<S: Scalar>(input: Var, out: &Tensor<S>, grad: &[S]) -> Contribs<S> {
    let d = *out.shape().last().unwrap_or(&1);
    let mut dx = Vec::with_capacity(grad.len());
    for (y, gr) in out.data().chunks(d).zip(grad.chunks(d)) {
        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a.f64() * b.f64()).sum();
        dx.extend(y.iter().zip(gr).map(|(&yv, &gv)| S::of(yv.f64() * (gv.f64() - dot))));
    }
    vec![(input, dx)]
}

pub(crate) fn weighted_sum_backward<S: Scalar>(g: &Graph<S>, inputs: &[Var], weights: Var, grad: &[S]) -> Contribs<S> {
    let w = g.value(weights).data();
    let mut out = Vec::with_capacity(inputs.len() + 1);
    let mut dw = Vec::with_capacity(inputs.len());
    for (k, &v) in inputs.iter().enumerate() {
        let x = g.value(v).data();
        dw.push(S::of(x.iter().zip(grad).map(|(a, b)| a.f64() * b.f64()).sum()));
        if g.requires_grad(v) {
            out.push((v, grad.iter().map(|&gv| gv * w[k]).collect()));
        }
    }
    out.push((weights, dw));
    out
}
