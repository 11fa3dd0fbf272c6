//! Central finite-difference checks for tape gradients.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::{Graph, Mode, OpKind, RunningStats, Tensor, Var};

/// Largest relative error a check may report and still pass.
pub const GRAD_TOL: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-5)`. The floor keeps tiny true gradients from
/// inflating the ratio.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Outcome of a check. `worst[i]` is the largest relative error over the
/// elements of input `i`.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub worst: Vec<f64>,
    pub checked: usize,
}

impl GradCheck {
    pub fn max_err(&self) -> f64 {
        self.worst.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_err() < GRAD_TOL
    }
}

/// Relative step sizes, tried in order until one agrees closely; the best is
/// kept. A wider step can straddle a nearby ReLU or max kink, while a wrong
/// backward rule disagrees at every step.
const STEPS: [f64; 6] = [1e-5, 3e-6, 1e-6, 3e-7, 1e-7, 3e-8];

/// Checks `f` against central differences with `h = step * max(1, |x|)`.
///
/// `f` receives a fresh graph and one leaf per input, and must return a scalar.
/// It is called once with gradient-tracking leaves (and `fault` injected), then
/// twice per element with constant leaves.
pub fn check<F>(inputs: &[Tensor<f64>], fault: Option<OpKind>, mut f: F) -> Result<GradCheck>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    g.inject_fault(fault);
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let grads: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();
    drop(g);

    let mut eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut work = inputs.to_vec();
    let mut worst = vec![0.0; inputs.len()];
    let mut checked = 0;
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let x = inputs[i].data()[j];
            let mut err = f64::INFINITY;
            for h in STEPS {
                let h = h * x.abs().max(1.0);
                work[i].data_mut()[j] = x + h;
                let up = eval(&work)?;
                work[i].data_mut()[j] = x - h;
                let down = eval(&work)?;
                work[i].data_mut()[j] = x;
                err = err.min(rel_err(grads[i].data()[j], (up - down) / (2.0 * h)));
                if err < GRAD_TOL * 1e-2 {
                    break;
                }
            }
            worst[i] = f64::max(worst[i], err);
            checked += 1;
        }
    }
    Ok(GradCheck { worst, checked })
}

/// Worst error of one op's check.
#[derive(Clone, Debug)]
pub struct OpReport {
    pub kind: OpKind,
    pub max_err: f64,
    pub checked: usize,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_err < GRAD_TOL
    }
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Uniform values kept at least `gap` away from zero.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v: f64 = rng.random_range(gap..1.0);
        if rng.random::<bool>() {
            v
        } else {
            -v
        }
    })
}

/// Distinct values in random order, so max ops have no near-ties.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.1).collect();
    vals.shuffle(rng);
    Tensor::new(shape.to_vec(), vals).unwrap()
}

/// `sum(out * probe)` with a fixed random probe, so every output element
/// carries a distinct weight.
fn probe(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = uniform(g.shape(out), &mut rng);
    if p.rank() == 0 {
        return Ok(out);
    }
    let p = g.constant(p);
    let y = g.mul(out, p)?;
    g.sum(y)
}

fn case(kind: OpKind, fault: Option<OpKind>, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        OpKind::Leaf => check(&[uniform(&[3], &mut rng)], fault, |g, v| probe(g, v[0], seed)),
        OpKind::Conv1d => {
            let ins = [uniform(&[2, 3, 7], &mut rng), uniform(&[4, 3, 3], &mut rng), uniform(&[4], &mut rng)];
            check(&ins, fault, |g, v| {
                let y = g.conv1d(v[0], v[1], Some(v[2]), 2, 1)?;
                probe(g, y, seed)
            })
        }
        OpKind::MaxPool1d => check(&[distinct(&[2, 2, 7], &mut rng)], fault, |g, v| {
            let y = g.maxpool1d(v[0], 2, 1, 1)?;
            probe(g, y, seed)
        }),
        OpKind::BatchNorm1d => {
            let ins = [uniform(&[3, 2, 5], &mut rng), uniform(&[2], &mut rng), uniform(&[2], &mut rng)];
            check(&ins, fault, |g, v| {
                let mut stats = RunningStats::new(2);
                let y = g.batchnorm1d(v[0], v[1], v[2], &mut stats, Mode::Train)?;
                probe(g, y, seed)
            })
        }
        OpKind::LayerNorm => {
            let ins = [uniform(&[2, 3, 4], &mut rng), uniform(&[3, 4], &mut rng), uniform(&[3, 4], &mut rng)];
            check(&ins, fault, |g, v| {
                let y = g.layernorm(v[0], v[1], v[2])?;
                probe(g, y, seed)
            })
        }
        OpKind::Relu => check(&[away_from_zero(&[2, 3, 4], 0.05, &mut rng)], fault, |g, v| {
            let y = g.relu(v[0])?;
            probe(g, y, seed)
        }),
        OpKind::Sigmoid => check(&[uniform(&[2, 5], &mut rng)], fault, |g, v| {
            let y = g.sigmoid(v[0])?;
            probe(g, y, seed)
        }),
        OpKind::Dropout => check(&[uniform(&[2, 3, 4], &mut rng)], fault, |g, v| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd0);
            let y = g.dropout(v[0], 0.3, Mode::Train, &mut mask_rng)?;
            probe(g, y, seed)
        }),
        OpKind::Add => {
            let ins = [uniform(&[2, 3, 4], &mut rng), uniform(&[2, 1, 4], &mut rng)];
            check(&ins, fault, |g, v| {
                let y = g.add(v[0], v[1])?;
                probe(g, y, seed)
            })
        }
        OpKind::Mul => {
            let ins = [uniform(&[2, 3, 4], &mut rng), uniform(&[2, 3, 1], &mut rng)];
            check(&ins, fault, |g, v| {
                let y = g.mul(v[0], v[1])?;
                let z = g.mul(y, y)?;
                g.sum(z)
            })
        }
        OpKind::Scale => check(&[uniform(&[4], &mut rng)], fault, |g, v| {
            let y = g.scale(v[0], -1.7)?;
            probe(g, y, seed)
        }),
        OpKind::Concat => {
            let ins = [uniform(&[2, 2, 3], &mut rng), uniform(&[2, 1, 3], &mut rng)];
            check(&ins, fault, |g, v| {
                let y = g.concat(&[v[0], v[1]], 1)?;
                probe(g, y, seed)
            })
        }
        OpKind::Reshape => check(&[uniform(&[2, 3, 2], &mut rng)], fault, |g, v| {
            let y = g.flatten(v[0], 1)?;
            probe(g, y, seed)
        }),
        OpKind::Narrow => check(&[uniform(&[2, 3, 5], &mut rng)], fault, |g, v| {
            let y = g.narrow(v[0], 2, 1, 3)?;
            probe(g, y, seed)
        }),
        OpKind::MeanAxis => check(&[uniform(&[2, 3, 4], &mut rng)], fault, |g, v| {
            let y = g.mean_axis(v[0], 1)?;
            probe(g, y, seed)
        }),
        OpKind::MaxAxis => check(&[distinct(&[2, 3, 4], &mut rng)], fault, |g, v| {
            let y = g.max_axis(v[0], 1)?;
            probe(g, y, seed)
        }),
        OpKind::Linear => {
            let ins = [uniform(&[3, 4], &mut rng), uniform(&[2, 4], &mut rng), uniform(&[2], &mut rng)];
            check(&ins, fault, |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2]))?;
                probe(g, y, seed)
            })
        }
        OpKind::Softmax => check(&[uniform(&[2, 5], &mut rng)], fault, |g, v| {
            let y = g.softmax(v[0])?;
            probe(g, y, seed)
        }),
        OpKind::WeightedSum => {
            let ins = [
                uniform(&[2, 3], &mut rng),
                uniform(&[2, 3], &mut rng),
                uniform(&[2, 3], &mut rng),
                uniform(&[3], &mut rng),
            ];
            check(&ins, fault, |g, v| {
                let y = g.weighted_sum(&v[..3], v[3])?;
                probe(g, y, seed)
            })
        }
        OpKind::Upsample => check(&[uniform(&[2, 2, 3], &mut rng)], fault, |g, v| {
            let y = g.upsample_nearest(v[0], 2)?;
            probe(g, y, seed)
        }),
        OpKind::Sum => check(&[uniform(&[2, 3], &mut rng)], fault, |g, v| {
            let y = g.sum(v[0])?;
            let y2 = g.mul(y, y)?;
            g.sum(y2)
        }),
        OpKind::Mean => check(&[uniform(&[2, 3], &mut rng)], fault, |g, v| {
            let y = g.mean(v[0])?;
            g.scale(y, 3.0)
        }),
        OpKind::BceWithLogits => {
            let targets = Tensor::from_fn([3, 4], |i| [0.0, 1.0, 0.25][i % 3]);
            check(&[uniform(&[3, 4], &mut rng)], fault, move |g, v| {
                let z = g.scale(v[0], 3.0)?;
                g.bce_with_logits(z, &targets)
            })
        }
        OpKind::KlDiv => {
            let ins = [uniform(&[2, 5], &mut rng), uniform(&[2, 5], &mut rng)];
            check(&ins, fault, |g, v| {
                let p = g.softmax(v[0])?;
                let q = g.softmax(v[1])?;
                g.kl_div(p, q)
            })
        }
    }
}

/// Runs the finite-difference check on a small random instance of every
/// differentiable op. `fault` corrupts one backward rule on the analytic pass.
pub fn op_suite(fault: Option<OpKind>, seed: u64) -> Result<Vec<OpReport>> {
    OpKind::DIFFERENTIABLE
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let c = case(kind, fault, seed.wrapping_add(i as u64))?;
            Ok(OpReport {
                kind,
                max_err: c.max_err(),
                checked: c.checked,
            })
        })
        .collect()
}
