use crate::error::{shape_err, Result};
use crate::graph::{Contribs, Op};
use crate::scalar::gemm;
use crate::{Graph, Scalar, Tensor, Var};

impl<S: Scalar> Graph<S> {
    /// `x [B, In] @ w[Out, In]^T + b[Out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let (&[b, fin], &[fout, win]) = (&xs[..], &ws[..]) else {
            return Err(shape_err("linear", format!("expected x [B,In] and w [Out,In], got {xs:?} and {ws:?}")));
        };
        if fin != win {
            return Err(shape_err("linear", format!("input has {fin} features but weight {ws:?} expects {win}")));
        }
        if let Some(bv) = bias {
            if self.shape(bv) != [fout] {
                return Err(shape_err("linear", format!("bias {:?} does not match Out={fout}", self.shape(bv))));
            }
        }
        let mut out = vec![S::zero(); b * fout];
        gemm(
            false,
            true,
            b,
            fout,
            fin,
            S::one(),
            self.value(input).data(),
            self.value(weight).data(),
            S::zero(),
            &mut out,
        );
        if let Some(bv) = bias {
            let bias = self.value(bv).data();
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(bias).for_each(|(o, b)| *o += *b);
            }
        }
        self.push(Tensor::new([b, fout], out)?, Op::Linear { input, weight, bias })
    }
}

pub(crate) fn linear_backward<S: Scalar>(g: &Graph<S>, input: Var, weight: Var, bias: Option<Var>, grad: &[S]) -> Contribs<S> {
    let (b, fin) = (g.shape(input)[0], g.shape(input)[1]);
    let fout = g.shape(weight)[0];
    let mut out = Vec::new();
    if g.requires_grad(input) {
        let mut dx = vec![S::zero(); b * fin];
        gemm(false, false, b, fin, fout, S::one(), grad, g.value(weight).data(), S::zero(), &mut dx);
        out.push((input, dx));
    }
    if g.requires_grad(weight) {
        let mut dw = vec![S::zero(); fout * fin];
        gemm(true, false, fout, fin, b, S::one(), grad, g.value(input).data(), S::zero(), &mut dw);
        out.push((weight, dw));
    }
    if let Some(bv) = bias.filter(|&bv| g.requires_grad(bv)) {
        let mut db = vec![S::zero(); fout];
        for row in grad.chunks(fout) {
            db.iter_mut().zip(row).for_each(|(d, r)| *d += *r);
        }
        out.push((bv, db));
    }
    out
}
