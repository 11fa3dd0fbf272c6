//! The MRM-Net architecture and its ablation variants.

pub mod attention;
pub mod layers;
pub mod loss;
pub mod ms_conv;

use mrm_tensor::{sigmoid, Graph, Mode, ParamStore, RunningStats, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use attention::{AttentionFusionLayer, Head};
use layers::{Builder, Conv, Ctx};
use loss::{ForwardArtifacts, LossBreakdown, Output};
use ms_conv::{MultiScaleFusion, Stem};

use crate::config::{Lengths, ModelConfig, VariantKind};
use crate::error::{config_err, Result};

/// One resolution path: its fusion block and attention-fusion layer.
#[derive(Clone, Debug)]
struct Branch {
    fusion: MultiScaleFusion,
    attention: AttentionFusionLayer,
    len: usize,
}

impl Branch {
    fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, stem: Var) -> Result<(Var, Var)> {
        let f = self.fusion.forward(cx, stem)?;
        let z = cx.g.narrow(f, 2, 0, self.len)?;
        let za = self.attention.forward(cx, z)?;
        Ok((z, za))
    }
}

#[derive(Clone, Debug)]
enum Fuse {
    Add { proj: Conv },
    Concat { proj: Conv, reduce: Conv },
}

#[derive(Clone, Debug)]
struct Net {
    stem: Stem,
    long: Option<Branch>,
    short: Option<Branch>,
    fuse: Option<Fuse>,
    heads: Vec<Head>,
}

/// Which prediction to report.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalBranch {
    /// Mean of both branch sigmoids (single-head variants: their only head).
    #[default]
    Ensemble,
    /// `sigmoid(out1)`, the C x 2N path.
    Branch1,
    /// `sigmoid(out2)`, the 2C x N path.
    Branch2,
}

impl std::str::FromStr for EvalBranch {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ensemble" => Ok(EvalBranch::Ensemble),
            "branch1" => Ok(EvalBranch::Branch1),
            "branch2" => Ok(EvalBranch::Branch2),
            _ => Err(config_err(format!("unknown eval branch `{s}` (expected ensemble, branch1 or branch2)"))),
        }
    }
}

/// Probabilities `[B, K]` for each available view.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<S: Scalar = f32> {
    pub ensemble: Tensor<S>,
    pub branch1: Option<Tensor<S>>,
    pub branch2: Option<Tensor<S>>,
}

impl<S: Scalar> Prediction<S> {
    pub fn select(&self, branch: EvalBranch) -> Result<&Tensor<S>> {
        match branch {
            EvalBranch::Ensemble => Ok(&self.ensemble),
            EvalBranch::Branch1 => self.branch1.as_ref().ok_or_else(|| config_err("variant has no branch1 head")),
            EvalBranch::Branch2 => self.branch2.as_ref().ok_or_else(|| config_err("variant has no branch2 head")),
        }
    }
}

fn sigmoid_tensor<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| sigmoid(v)).collect()).unwrap()
}

#[derive(Clone, Debug)]
pub struct Model<S: Scalar = f32> {
    pub config: ModelConfig,
    pub kind: VariantKind,
    pub params: ParamStore<S>,
    /// Batch-norm running statistics, keyed by the layer's name.
    pub stats: Vec<(String, RunningStats<S>)>,
    lengths: Lengths,
    net: Net,
}

impl<S: Scalar> Model<S> {
    /// Validates `config` and initializes parameters from `seed`.
    pub fn new(config: ModelConfig, kind: VariantKind, seed: u64) -> Result<Self> {
        config.validate()?;
        let lengths = config.lengths()?;
        let (c, k) = (config.low_channels, config.num_classes);
        let mut params = ParamStore::new();
        let mut stats = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut params, &mut stats, &mut rng);

        let stem = Stem::new(&mut b, &config)?;
        let uses_long = kind != VariantKind::LowRs;
        let uses_short = kind != VariantKind::HighRs;
        let branch = |b: &mut Builder<S>, i: usize, ch: usize, stride: usize, len: usize| -> Result<Branch> {
            Ok(Branch {
                fusion: MultiScaleFusion::new(b, &format!("fusion{i}"), &config, ch, stride)?,
                attention: AttentionFusionLayer::new(b, &format!("attention{i}"), &config, ch, len)?,
                len,
            })
        };
        let long = uses_long.then(|| branch(&mut b, 1, c, 1, 2 * lengths.n)).transpose()?;
        let short = uses_short.then(|| branch(&mut b, 2, 2 * c, 2, lengths.n)).transpose()?;
        let fuse = match kind {
            VariantKind::FAddition => Some(b.scope("fuse", |b| {
                Ok(Fuse::Add {
                    proj: Conv::new(b, "proj", 2 * c, c, 1, 1)?,
                })
            })?),
            VariantKind::FConcat => Some(b.scope("fuse", |b| {
                Ok(Fuse::Concat {
                    proj: Conv::new(b, "proj", 2 * c, c, 1, 1)?,
                    reduce: Conv::new(b, "reduce", 2 * c, c, 1, 1)?,
                })
            })?),
            _ => None,
        };
        let heads = match kind {
            VariantKind::Mrm => vec![Head::new(&mut b, "head1", c, k)?, Head::new(&mut b, "head2", 2 * c, k)?],
            VariantKind::LowRs => vec![Head::new(&mut b, "head", 2 * c, k)?],
            _ => vec![Head::new(&mut b, "head", c, k)?],
        };
        let net = Net {
            stem,
            long,
            short,
            fuse,
            heads,
        };
        Ok(Model {
            config,
            kind,
            params,
            stats,
            lengths,
            net,
        })
    }

    pub fn lengths(&self) -> Lengths {
        self.lengths
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    /// Same model in another precision.
    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            kind: self.kind,
            params: self.params.cast(),
            stats: self
                .stats
                .iter()
                .map(|(n, s)| {
                    let mut t = RunningStats::<T>::new(s.channels());
                    t.mean = s.mean.iter().map(|v| T::of(v.f64())).collect();
                    t.var = s.var.iter().map(|v| T::of(v.f64())).collect();
                    t.momentum = s.momentum;
                    (n.clone(), t)
                })
                .collect(),
            lengths: self.lengths,
            net: self.net.clone(),
        }
    }

    /// Adds every parameter to `g` as a leaf, in store order.
    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> Vec<Var> {
        self.params.values().iter().map(|t| g.leaf(t.clone(), trainable)).collect()
    }

    /// Forward pass with parameters already bound as `p`. In train mode, BN
    /// running statistics are updated and dropout draws from the stream of
    /// `(seed, step)`.
    pub fn forward(&mut self, g: &mut Graph<S>, p: &[Var], x: Var, mode: Mode, seed: u64, step: u64) -> Result<Output> {
        if p.len() != self.params.len() {
            return Err(config_err(format!("{} parameter leaves for {} parameters", p.len(), self.params.len())));
        }
        let Model { net, stats, .. } = self;
        let mut cx = Ctx::new(g, p, stats, mode, seed, step);
        let s = net.stem.forward(&mut cx, x)?;
        let long = net.long.as_ref().map(|b| b.forward(&mut cx, s)).transpose()?;
        let short = net.short.as_ref().map(|b| b.forward(&mut cx, s)).transpose()?;

        match (long, short, &net.fuse) {
            (Some((z1, z3)), Some((z2, z4)), None) => {
                let out1 = net.heads[0].forward(&mut cx, z3)?;
                let out2 = net.heads[1].forward(&mut cx, z4)?;
                let a = ForwardArtifacts {
                    z1,
                    z2,
                    z3,
                    z4,
                    out1,
                    out2,
                };
                check_pairing(cx.g, &a)?;
                Ok(Output::Dual(a))
            }
            (Some((_, z3)), Some((_, z4)), Some(fuse)) => {
                let up = cx.g.upsample_nearest(z4, 2)?;
                let fused = match fuse {
                    Fuse::Add { proj } => {
                        let u = proj.forward(&mut cx, up)?;
                        cx.g.add(z3, u)?
                    }
                    Fuse::Concat { proj, reduce } => {
                        let u = proj.forward(&mut cx, up)?;
                        let cat = cx.g.concat(&[z3, u], 1)?;
                        reduce.forward(&mut cx, cat)?
                    }
                };
                let logits = net.heads[0].forward(&mut cx, fused)?;
                Ok(Output::Single { logits })
            }
            (Some((_, z)), None, None) | (None, Some((_, z)), None) => {
                let logits = net.heads[0].forward(&mut cx, z)?;
                Ok(Output::Single { logits })
            }
            _ => unreachable!("constructor wires every variant"),
        }
    }

    /// One training forward/backward on a batch. Returns the loss components
    /// and one gradient per parameter, in store order.
    pub fn train_step(&mut self, x: &Tensor<S>, y: &Tensor<S>, seed: u64, step: u64) -> Result<(LossBreakdown, Vec<Option<Tensor<S>>>)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &p, xv, Mode::Train, seed, step)?;
        let (loss, lb) = loss::total_loss(&mut g, &out, y, &self.config)?;
        g.backward(loss)?;
        let grads = p.iter().map(|&v| g.grad(v)).collect();
        Ok((lb, grads))
    }

    /// Eval-mode probabilities.
    pub fn predict(&mut self, x: &Tensor<S>) -> Result<Prediction<S>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        match self.forward(&mut g, &p, xv, Mode::Eval, 0, 0)? {
            Output::Single { logits } => Ok(Prediction {
                ensemble: sigmoid_tensor(g.value(logits)),
                branch1: None,
                branch2: None,
            }),
            Output::Dual(a) => {
                let p1 = sigmoid_tensor(g.value(a.out1));
                let p2 = sigmoid_tensor(g.value(a.out2));
                let half = S::of(0.5);
                let mean = p1.data().iter().zip(p2.data()).map(|(&u, &v)| (u + v) * half).collect();
                Ok(Prediction {
                    ensemble: Tensor::new(p1.shape().to_vec(), mean)?,
                    branch1: Some(p1),
                    branch2: Some(p2),
                })
            }
        }
    }
}

/// Runtime check that all three KL pairs flatten to equal lengths.
fn check_pairing<S: Scalar>(g: &Graph<S>, a: &ForwardArtifacts) -> Result<()> {
    let per_sample = |v: Var| g.shape(v)[1..].iter().product::<usize>();
    for (x, y, name) in [(a.z1, a.z2, "Z1/Z2"), (a.z3, a.z4, "Z3/Z4"), (a.out1, a.out2, "out1/out2")] {
        if per_sample(x) != per_sample(y) {
            return Err(config_err(format!(
                "{name} flatten to different lengths: {:?} vs {:?}",
                g.shape(x),
                g.shape(y)
            )));
        }
    }
    Ok(())
}
