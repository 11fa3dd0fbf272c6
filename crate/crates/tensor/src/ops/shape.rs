use super::split_axis;
use crate::error::{arg_err, shape_err, Result};
use crate::graph::{Contribs, Op};
use crate::{Graph, Scalar, Tensor, Var};

impl<S: Scalar> Graph<S> {
    /// Concatenates along `axis`. All other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(arg_err("concat", "no inputs"));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let same = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !same {
                return Err(shape_err("concat", format!("{s:?} does not match {base:?} off axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * n..(o + 1) * n]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape.to_vec())?;
        self.push(value, Op::Reshape { input })
    }

    /// Merges axes `start..` into one.
    pub fn flatten(&mut self, input: Var, start: usize) -> Result<Var> {
        let s = self.shape(input);
        if start >= s.len() {
            return Err(shape_err("flatten", format!("start {start} out of range for {s:?}")));
        }
        let mut shape = s[..start].to_vec();
        shape.push(s[start..].iter().product());
        self.reshape(input, &shape)
    }

    /// The slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if axis >= xs.len() || start + len > xs[axis] {
            return Err(shape_err(
                "narrow",
                format!("cannot take {start}..{} of axis {axis} in {xs:?}", start + len),
            ));
        }
        let (outer, n, inner) = split_axis(&xs, axis);
        let x = self.value(input).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        self.push(Tensor::new(shape, data)?, Op::Narrow { input, axis, start })
    }

    /// Mean along `axis`, keeping it with extent 1.
    pub fn mean_axis(&mut self, input: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if axis >= xs.len() || xs[axis] == 0 {
            return Err(shape_err("mean_axis", format!("cannot reduce axis {axis} of {xs:?}")));
        }
        let (outer, n, inner) = split_axis(&xs, axis);
        let x = self.value(input).data();
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let acc: f64 = (0..n).map(|j| x[(o * n + j) * inner + i].f64()).sum();
                data.push(S::of(acc / n as f64));
            }
        }
        let mut shape = xs;
        shape[axis] = 1;
        self.push(Tensor::new(shape, data)?, Op::MeanAxis { input, axis })
    }

    /// `[B, C, L] -> [B, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let [b, c, _] = xs[..] else {
            return Err(shape_err("global_avg_pool", format!("input must be [B,C,L], got {xs:?}")));
        };
        let m = self.mean_axis(input, 2)?;
        self.reshape(m, &[b, c])
    }

    /// Nearest-neighbour upsampling of the last axis by an integer factor.
    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if factor == 0 || xs.is_empty() {
            return Err(arg_err("upsample_nearest", format!("factor {factor} on {xs:?}")));
        }
        let x = self.value(input).data();
        let mut data = Vec::with_capacity(x.len() * factor);
        for &v in x {
            data.extend(std::iter::repeat_n(v, factor));
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() *= factor;
        self.push(Tensor::new(shape, data)?, Op::Upsample { input, factor })
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let acc: f64 = self.value(input).data().iter().map(|v| v.f64()).sum();
        self.push(Tensor::scalar(S::of(acc)), Op::Sum { input })
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.numel() == 0 {
            return Err(arg_err("mean", "empty tensor"));
        }
        let acc: f64 = x.data().iter().map(|v| v.f64()).sum();
        let value = Tensor::scalar(S::of(acc / x.numel() as f64));
        self.push(value, Op::Mean { input })
    }
}

pub(crate) fn concat_backward<S: Scalar>(g: &Graph<S>, inputs: &[Var], axis: usize, out: &Tensor<S>, grad: &[S]) -> Contribs<S> {
    let (outer, _, inner) = split_axis(out.shape(), axis);
    let mut parts: Vec<Vec<S>> = inputs.iter().map(|&v| Vec::with_capacity(g.value(v).numel())).collect();
    let mut pos = 0;
    for _ in 0..outer {
        for (k, &v) in inputs.iter().enumerate() {
            let n = g.shape(v)[axis] * inner;
            parts[k].extend_from_slice(&grad[pos..pos + n]);
            pos += n;
        }
    }
    inputs.iter().copied().zip(parts).filter(|(v, _)| g.requires_grad(*v)).collect()
}

pub(crate) fn narrow_backward<S: Scalar>(
    g: &Graph<S>,
    input: Var,
    axis: usize,
    start: usize,
    out: &Tensor<S>,
    grad: &[S],
) -> Contribs<S> {
    let (outer, n, inner) = split_axis(g.shape(input), axis);
    let len = out.shape()[axis];
    let mut dx = vec![S::zero(); g.value(input).numel()];
    for o in 0..outer {
        let base = (o * n + start) * inner;
        dx[base..base + len * inner].copy_from_slice(&grad[o * len * inner..(o + 1) * len * inner]);
    }
    vec![(input, dx)]
}

pub(crate) fn mean_axis_backward<S: Scalar>(g: &Graph<S>, input: Var, axis: usize, grad: &[S]) -> Contribs<S> {
    let (outer, n, inner) = split_axis(g.shape(input), axis);
    let scale = S::of(1.0 / n as f64);
    let mut dx = vec![S::zero(); outer * n * inner];
    for o in 0..outer {
        for j in 0..n {
            for i in 0..inner {
                dx[(o * n + j) * inner + i] = grad[o * inner + i] * scale;
            }
        }
    }
    vec![(input, dx)]
}

pub(crate) fn upsample_backward<S: Scalar>(g: &Graph<S>, input: Var, factor: usize, grad: &[S]) -> Contribs<S> {
    debug_assert_eq!(grad.len(), g.value(input).numel() * factor);
    let dx = grad.chunks(factor).map(|c| c.iter().copied().sum()).collect();
    vec![(input, dx)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_and_narrow_round_trip() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_fn([2, 2, 3], |i| i as f64));
        let b = g.constant(Tensor::from_fn([2, 1, 3], |i| 100.0 + i as f64));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 3]);
        let back = g.narrow(c, 1, 0, 2).unwrap();
        assert_eq!(g.value(back), g.value(a));
        let tail = g.narrow(c, 1, 2, 1).unwrap();
        assert_eq!(g.value(tail), g.value(b));
        assert!(g.narrow(c, 1, 2, 2).is_err());
    }

    #[test]
    fn concat_rejects_mismatched_extents() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros([1, 2, 3]));
        let b = g.constant(Tensor::zeros([1, 2, 4]));
        assert!(g.concat(&[a, b], 1).is_err());
        assert!(g.concat(&[a, b], 2).is_ok());
    }

    #[test]
    fn upsample_repeats_each_sample() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new([1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.upsample_nearest(x, 2).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn global_avg_pool_averages_length() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new([1, 2, 2], vec![1.0, 3.0, -2.0, 4.0]).unwrap());
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.shape(y), &[1, 2]);
        assert_eq!(g.value(y).data(), &[2.0, 1.0]);
    }
}
