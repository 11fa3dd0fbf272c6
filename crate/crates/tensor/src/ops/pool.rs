use super::{as_bcl, split_axis};
use crate::error::{arg_err, shape_err, Result};
use crate::graph::{Contribs, Op};
use crate::ops::conv::conv_out_len;
use crate::{Graph, Scalar, Tensor, Var};

impl<S: Scalar> Graph<S> {
    /// Max pooling over the last axis. Padded positions act as -inf, so they
    /// never win; ties go to the lowest index.
    pub fn maxpool1d(&mut self, input: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let (b, c, len) = as_bcl(&xs).ok_or_else(|| shape_err("maxpool1d", format!("input must be [C,L] or [B,C,L], got {xs:?}")))?;
        if padding >= kernel {
            return Err(arg_err(
                "maxpool1d",
                format!("padding {padding} >= kernel {kernel} leaves windows with no real sample"),
            ));
        }
        let lout = conv_out_len(len, kernel, stride, padding).ok_or_else(|| {
            arg_err(
                "maxpool1d",
                format!("kernel {kernel} exceeds padded length {}", len + 2 * padding),
            )
        })?;
        let x = self.value(input).data();
        let rows = b * c;
        let mut out = Vec::with_capacity(rows * lout);
        let mut argmax = Vec::with_capacity(rows * lout);
        for r in 0..rows {
            let row = &x[r * len..(r + 1) * len];
            for t in 0..lout {
                let start = (t * stride) as isize - padding as isize;
                let lo = start.max(0) as usize;
                let hi = ((start + kernel as isize) as usize).min(len);
                let mut best = lo;
                for i in lo + 1..hi {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push(r * len + best);
            }
        }
        let shape = if xs.len() == 2 { vec![c, lout] } else { vec![b, c, lout] };
        self.push(Tensor::new(shape, out)?, Op::MaxPool1d { input, argmax })
    }

    /// Maximum along `axis`, keeping it with extent 1. Ties go to the lowest index.
    pub fn max_axis(&mut self, input: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if axis >= xs.len() || xs[axis] == 0 {
            return Err(shape_err("max_axis", format!("cannot reduce axis {axis} of {xs:?}")));
        }
        let (outer, n, inner) = split_axis(&xs, axis);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut best = base;
                for j in 1..n {
                    let idx = base + j * inner;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
        let mut shape = xs;
        shape[axis] = 1;
        self.push(Tensor::new(shape, out)?, Op::MaxAxis { input, argmax })
    }
}

/// Routes each output gradient to the input position that won.
pub(crate) fn scatter_backward<S: Scalar>(g: &Graph<S>, input: Var, argmax: &[usize], grad: &[S]) -> Contribs<S> {
    let mut dx = vec![S::zero(); g.value(input).numel()];
    for (&i, &gv) in argmax.iter().zip(grad) {
        dx[i] += gv;
    }
    vec![(input, dx)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(data: Vec<f64>, k: usize, s: usize, p: usize) -> Vec<f64> {
        let mut g = Graph::<f64>::new();
        let n = data.len();
        let x = g.constant(Tensor::new([1, n], data).unwrap());
        let y = g.maxpool1d(x, k, s, p).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn hand_enumerated_windows() {
        assert_eq!(pool(vec![1.0, 3.0, 2.0, 4.0], 2, 1, 1), vec![1.0, 3.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn padding_never_wins_over_negative_values() {
        assert_eq!(pool(vec![-5.0, -7.0], 2, 1, 1), vec![-5.0, -5.0, -7.0]);
    }

    #[test]
    fn constant_input_gives_constant_output() {
        for (k, s, p) in [(2, 1, 1), (3, 2, 1), (4, 3, 2), (1, 1, 0)] {
            let out = pool(vec![2.5; 9], k, s, p);
            assert!(out.iter().all(|&v| v == 2.5));
        }
    }

    #[test]
    fn pool_k2_s1_p1_adds_one_sample() {
        for len in [5, 32, 1000] {
            assert_eq!(pool(vec![0.0; len], 2, 1, 1).len(), len + 1);
        }
    }

    #[test]
    fn ties_route_gradient_to_lowest_index() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new([1, 3], vec![1.0, 1.0, 0.0]).unwrap());
        let y = g.maxpool1d(x, 2, 1, 0).unwrap();
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        // highest-index ties would give [0, 2, 0]
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_kernel_larger_than_padded_length() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros([1, 2]));
        assert!(g.maxpool1d(x, 5, 1, 1).is_err());
        assert!(g.maxpool1d(x, 2, 1, 2).is_err());
    }

    #[test]
    fn max_axis_over_channels() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new([1, 2, 3], vec![1.0, 5.0, 2.0, 4.0, 0.0, 2.0]).unwrap());
        let y = g.max_axis(x, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 3]);
        assert_eq!(g.value(y).data(), &[4.0, 5.0, 2.0]);
    }
}
