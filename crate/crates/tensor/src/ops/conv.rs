//! 1-D convolution as im2col followed by one GEMM per sample.
//!
//! * input:  `[Cin, L]` or `[B, Cin, L]`
//! * weight: `[Cout, Cin, K]`
//! * bias:   `[Cout]`
//! * output: `[Cout, Lout]` or `[B, Cout, Lout]`, `Lout = (L + 2P - K) / S + 1`

use super::as_bcl;
use crate::error::{shape_err, Result};
use crate::graph::{Contribs, Op};
use crate::scalar::gemm;
use crate::{Graph, Scalar, Tensor, Var};

/// Output length of a strided, zero-padded window op.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || kernel > len + 2 * padding {
        return None;
    }
    Some((len + 2 * padding - kernel) / stride + 1)
}

/// Valid output positions `t` with `0 <= t*stride + k - pad < len`.
fn valid_range(len: usize, lout: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride).min(lout) } else { 0 };
    let hi = if len + pad > k {
        ((len - 1 + pad - k) / stride + 1).min(lout)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct Geometry {
    cin: usize,
    len: usize,
    k: usize,
    stride: usize,
    pad: usize,
    lout: usize,
}

fn im2col<S: Scalar>(x: &[S], geo: &Geometry, cols: &mut [S]) {
    let Geometry {
        cin,
        len,
        k,
        stride,
        pad,
        lout,
    } = *geo;
    for ci in 0..cin {
        let src = &x[ci * len..(ci + 1) * len];
        for kk in 0..k {
            let row = &mut cols[(ci * k + kk) * lout..][..lout];
            let (lo, hi) = valid_range(len, lout, kk, stride, pad);
            row[..lo].fill(S::zero());
            row[hi..].fill(S::zero());
            if stride == 1 {
                let start = lo + kk - pad;
                row[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
            } else {
                for t in lo..hi {
                    row[t] = src[t * stride + kk - pad];
                }
            }
        }
    }
}

fn col2im_add<S: Scalar>(cols: &[S], geo: &Geometry, dx: &mut [S]) {
    let Geometry {
        cin,
        len,
        k,
        stride,
        pad,
        lout,
    } = *geo;
    for ci in 0..cin {
        let dst = &mut dx[ci * len..(ci + 1) * len];
        for kk in 0..k {
            let row = &cols[(ci * k + kk) * lout..][..lout];
            let (lo, hi) = valid_range(len, lout, kk, stride, pad);
            for t in lo..hi {
                dst[t * stride + kk - pad] += row[t];
            }
        }
    }
}

impl<S: Scalar> Graph<S> {
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let (b, cin, len) = as_bcl(&xs).ok_or_else(|| shape_err("conv1d", format!("input must be [C,L] or [B,C,L], got {xs:?}")))?;
        let [cout, wcin, k] = ws[..] else {
            return Err(shape_err("conv1d", format!("weight must be [Cout,Cin,K], got {ws:?}")));
        };
        if wcin != cin {
            return Err(shape_err("conv1d", format!("input has {cin} channels but weight {ws:?} expects {wcin}")));
        }
        if let Some(bv) = bias {
            if self.shape(bv) != [cout] {
                return Err(shape_err("conv1d", format!("bias {:?} does not match Cout={cout}", self.shape(bv))));
            }
        }
        let lout = conv_out_len(len, k, stride, padding).ok_or_else(|| {
            shape_err(
                "conv1d",
                format!("kernel {k} does not fit length {len} with padding {padding} and stride {stride}"),
            )
        })?;
        let geo = Geometry {
            cin,
            len,
            k,
            stride,
            pad: padding,
            lout,
        };

        let x = self.value(input).data();
        let w = self.value(weight).data();
        let mut out = vec![S::zero(); b * cout * lout];
        let mut cols = vec![S::zero(); cin * k * lout];
        for bi in 0..b {
            im2col(&x[bi * cin * len..(bi + 1) * cin * len], &geo, &mut cols);
            let ob = &mut out[bi * cout * lout..(bi + 1) * cout * lout];
            gemm(false, false, cout, lout, cin * k, S::one(), w, &cols, S::zero(), ob);
            if let Some(bv) = bias {
                let bias = self.value(bv).data();
                for (co, row) in ob.chunks_mut(lout).enumerate() {
                    row.iter_mut().for_each(|v| *v += bias[co]);
                }
            }
        }
        let shape = if xs.len() == 2 { vec![cout, lout] } else { vec![b, cout, lout] };
        let value = Tensor::new(shape, out)?;
        self.push(
            value,
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        )
    }
}

pub(crate) fn conv1d_backward<S: Scalar>(
    g: &Graph<S>,
    input: Var,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    grad: &[S],
) -> Contribs<S> {
    let (b, cin, len) = as_bcl(g.shape(input)).expect("validated in forward");
    let ws = g.shape(weight);
    let (cout, k) = (ws[0], ws[2]);
    let lout = grad.len() / (b * cout);
    let geo = Geometry {
        cin,
        len,
        k,
        stride,
        pad: padding,
        lout,
    };
    let x = g.value(input).data();
    let w = g.value(weight).data();
    let need_x = g.requires_grad(input);
    let need_w = g.requires_grad(weight);

    let mut dx = if need_x { vec![S::zero(); x.len()] } else { Vec::new() };
    let mut dw = if need_w { vec![S::zero(); w.len()] } else { Vec::new() };
    let mut cols = vec![S::zero(); cin * k * lout];
    for bi in 0..b {
        let gb = &grad[bi * cout * lout..(bi + 1) * cout * lout];
        if need_w {
            im2col(&x[bi * cin * len..(bi + 1) * cin * len], &geo, &mut cols);
            gemm(false, true, cout, cin * k, lout, S::one(), gb, &cols, S::one(), &mut dw);
        }
        if need_x {
            gemm(true, false, cin * k, lout, cout, S::one(), w, gb, S::zero(), &mut cols);
            col2im_add(&cols, &geo, &mut dx[bi * cin * len..(bi + 1) * cin * len]);
        }
    }

    let mut out = Vec::new();
    if need_x {
        out.push((input, dx));
    }
    if need_w {
        out.push((weight, dw));
    }
    if let Some(bv) = bias.filter(|&bv| g.requires_grad(bv)) {
        let mut db = vec![S::zero(); cout];
        for gb in grad.chunks(cout * lout) {
            for (co, row) in gb.chunks(lout).enumerate() {
                db[co] += row.iter().copied().sum::<S>();
            }
        }
        out.push((bv, db));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct triple loop: out[co,t] = b[co] + sum_ci sum_k w[co,ci,k] * xpad[ci, t*s + k].
    fn naive(x: &[f64], cin: usize, len: usize, w: &[f64], cout: usize, k: usize, b: &[f64], s: usize, p: usize) -> Vec<f64> {
        let lout = (len + 2 * p - k) / s + 1;
        let mut out = vec![0.0; cout * lout];
        for co in 0..cout {
            for t in 0..lout {
                let mut acc = b[co];
                for ci in 0..cin {
                    for kk in 0..k {
                        let pos = (t * s + kk) as isize - p as isize;
                        if pos >= 0 && (pos as usize) < len {
                            acc += w[(co * cin + ci) * k + kk] * x[ci * len + pos as usize];
                        }
                    }
                }
                out[co * lout + t] = acc;
            }
        }
        out
    }

    #[test]
    fn table1_first_layer_shape() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([12, 1000]));
        let w = g.constant(Tensor::zeros([32, 12, 11]));
        let b = g.constant(Tensor::zeros([32]));
        let y = g.conv1d(x, w, Some(b), 1, 5).unwrap();
        assert_eq!(g.shape(y), &[32, 1000]);
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = vec![0.5, -1.0, 2.0, 3.25];
        let x = g.constant(Tensor::new([1, 4], data.clone()).unwrap());
        let w = g.constant(Tensor::ones([1, 1, 1]));
        let b = g.constant(Tensor::zeros([1]));
        let y = g.conv1d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn small_case_matches_triple_loop() {
        let x: Vec<f64> = (0..14).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.3).collect();
        let w: Vec<f64> = (0..18).map(|i| ((i * 5 % 13) as f64 - 6.0) * 0.1).collect();
        let b = vec![0.1, -0.2, 0.3];
        let mut g = Graph::<f64>::new();
        let xv = g.constant(Tensor::new([2, 7], x.clone()).unwrap());
        let wv = g.constant(Tensor::new([3, 2, 3], w.clone()).unwrap());
        let bv = g.constant(Tensor::new([3], b.clone()).unwrap());
        let y = g.conv1d(xv, wv, Some(bv), 1, 1).unwrap();
        let want = naive(&x, 2, 7, &w, 3, 3, &b, 1, 1);
        for (a, e) in g.value(y).data().iter().zip(&want) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_oversized_kernel_and_channel_mismatch() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([2, 4]));
        let w = g.constant(Tensor::zeros([1, 2, 7]));
        assert!(g.conv1d(x, w, None, 1, 1).is_err());
        let w = g.constant(Tensor::zeros([1, 3, 3]));
        let err = g.conv1d(x, w, None, 1, 1).unwrap_err().to_string();
        assert!(err.contains("2 channels"), "{err}");
    }

    #[test]
    fn output_length_formula_matches_enumeration() {
        for len in 1..20 {
            for k in 1..8 {
                for s in 1..4 {
                    for p in 0..4 {
                        let count = (0..)
                            .take_while(|t| t * s + k <= len + 2 * p)
                            .count();
                        let expect = if k > len + 2 * p { None } else { Some(count) };
                        assert_eq!(conv_out_len(len, k, s, p), expect, "L={len} K={k} S={s} P={p}");
                    }
                }
            }
        }
    }
}
