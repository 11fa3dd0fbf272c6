use mrm_tensor::{Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{config_err, Result};

/// Per-sample `KL(p||q) + KL(q||p)` with `p, q` the softmax of each flattened
/// feature map, averaged over the batch.
pub fn mutual_loss<S: Scalar>(g: &mut Graph<S>, a: Var, b: Var) -> Result<Var> {
    let (sa, sb) = (g.shape(a).to_vec(), g.shape(b).to_vec());
    let count = |s: &[usize]| s[1..].iter().product::<usize>();
    if sa.len() < 2 || sb.len() < 2 || sa[0] != sb[0] || count(&sa) != count(&sb) {
        return Err(config_err(format!("mutual loss needs equal per-sample element counts, got {sa:?} and {sb:?}")));
    }
    let fa = g.flatten(a, 1)?;
    let fb = g.flatten(b, 1)?;
    let p = g.softmax(fa)?;
    let q = g.softmax(fb)?;
    let pq = g.kl_div(p, q)?;
    let qp = g.kl_div(q, p)?;
    Ok(g.add(pq, qp)?)
}

/// Scalar loss components of one batch, exactly as combined into `l_total`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_detect: f64,
    pub l_m_z12: f64,
    pub l_m_z34: f64,
    pub l_m_out: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    /// `l_detect + alpha l_m_z12 + beta l_m_z34 + gamma l_m_out`, recomputed in f64.
    pub fn recombine(&self, cfg: &ModelConfig) -> f64 {
        self.l_detect + cfg.alpha * self.l_m_z12 + cfg.beta * self.l_m_z34 + cfg.gamma * self.l_m_out
    }
}

/// The six tensors one forward pass of the dual-branch model produces.
#[derive(Clone, Copy, Debug)]
pub struct ForwardArtifacts {
    pub z1: Var,
    pub z2: Var,
    pub z3: Var,
    pub z4: Var,
    pub out1: Var,
    pub out2: Var,
}

#[derive(Clone, Copy, Debug)]
pub enum Output {
    Dual(ForwardArtifacts),
    Single { logits: Var },
}

fn check_labels<S: Scalar>(g: &Graph<S>, logits: Var, y: &Tensor<S>) -> Result<()> {
    if g.shape(logits) != y.shape() {
        return Err(config_err(format!("labels {:?} do not match logits {:?}", y.shape(), g.shape(logits))));
    }
    Ok(())
}

/// Detection loss plus the weighted mutual terms. Returns the graph node of
/// `l_total` and every component's value.
pub fn total_loss<S: Scalar>(g: &mut Graph<S>, out: &Output, y: &Tensor<S>, cfg: &ModelConfig) -> Result<(Var, LossBreakdown)> {
    match *out {
        Output::Single { logits } => {
            check_labels(g, logits, y)?;
            let l = g.bce_with_logits(logits, y)?;
            let v = g.value(l).item().f64();
            Ok((
                l,
                LossBreakdown {
                    l_detect: v,
                    l_total: v,
                    ..Default::default()
                },
            ))
        }
        Output::Dual(a) => {
            check_labels(g, a.out1, y)?;
            check_labels(g, a.out2, y)?;
            let d1 = g.bce_with_logits(a.out1, y)?;
            let d2 = g.bce_with_logits(a.out2, y)?;
            let detect = g.add(d1, d2)?;
            let m12 = mutual_loss(g, a.z1, a.z2)?;
            let m34 = mutual_loss(g, a.z3, a.z4)?;
            let mout = mutual_loss(g, a.out1, a.out2)?;
            let mut total = detect;
            for (term, w) in [(m12, cfg.alpha), (m34, cfg.beta), (mout, cfg.gamma)] {
                let t = g.scale(term, w)?;
                total = g.add(total, t)?;
            }
            let val = |v: Var| g.value(v).item().f64();
            let lb = LossBreakdown {
                l_detect: val(detect),
                l_m_z12: val(m12),
                l_m_z34: val(m34),
                l_m_out: val(mout),
                l_total: val(total),
            };
            Ok((total, lb))
        }
    }
}
