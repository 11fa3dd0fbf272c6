//! Parameterized building blocks. Each layer only stores parameter slots; the
//! tensors live in the model's [`ParamStore`] and are bound to graph leaves
//! once per forward pass.

use mrm_tensor::init::kaiming_uniform;
use mrm_tensor::{Graph, Mode, ParamStore, RunningStats, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Registers parameters under a dotted name prefix.
pub struct Builder<'a, S: Scalar> {
    pub(crate) params: &'a mut ParamStore<S>,
    pub(crate) stats: &'a mut Vec<(String, RunningStats<S>)>,
    pub(crate) rng: &'a mut ChaCha8Rng,
    prefix: Vec<String>,
}

impl<'a, S: Scalar> Builder<'a, S> {
    pub fn new(params: &'a mut ParamStore<S>, stats: &'a mut Vec<(String, RunningStats<S>)>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            params,
            stats,
            rng,
            prefix: Vec::new(),
        }
    }

    fn path(&self, leaf: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(leaf.to_string());
        parts.join(".")
    }

    /// Runs `f` with `name` appended to the prefix.
    pub fn scope<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.prefix.push(name.to_string());
        let out = f(self);
        self.prefix.pop();
        out
    }

    pub(crate) fn add(&mut self, leaf: &str, value: Tensor<S>) -> Result<usize> {
        let name = self.path(leaf);
        Ok(self.params.insert(name, value)?)
    }

    fn add_stats(&mut self, channels: usize) -> usize {
        let name = self.prefix.join(".");
        self.stats.push((name, RunningStats::new(channels)));
        self.stats.len() - 1
    }
}

/// What a forward pass needs besides the input: the graph, bound parameter
/// leaves, BN statistics, the mode and the dropout stream identity.
pub struct Ctx<'a, S: Scalar> {
    pub g: &'a mut Graph<S>,
    pub p: &'a [Var],
    pub stats: &'a mut [(String, RunningStats<S>)],
    pub mode: Mode,
    pub seed: u64,
    pub step: u64,
    pub(crate) dropout_layer: u64,
}

impl<'a, S: Scalar> Ctx<'a, S> {
    pub fn new(g: &'a mut Graph<S>, p: &'a [Var], stats: &'a mut [(String, RunningStats<S>)], mode: Mode, seed: u64, step: u64) -> Self {
        Self {
            g,
            p,
            stats,
            mode,
            seed,
            step,
            dropout_layer: 0,
        }
    }

    /// One independent stream per (seed, step, dropout layer).
    fn dropout_rng(&mut self) -> ChaCha8Rng {
        let layer = self.dropout_layer;
        self.dropout_layer += 1;
        ChaCha8Rng::seed_from_u64(mix(&[self.seed, self.step, layer]))
    }
}

/// SplitMix64-style combination of several words into one seed.
pub fn mix(words: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &w in words {
        let mut z = h ^ w.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    /// Same-padded conv: padding `(k - 1) / 2`.
    pub fn new<S: Scalar>(b: &mut Builder<S>, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        b.scope(name, |b| {
            let w = kaiming_uniform(&[cout, cin, k], cin * k, b.rng);
            Ok(Conv {
                weight: b.add("weight", w)?,
                bias: b.add("bias", Tensor::zeros([cout]))?,
                stride,
                padding: k / 2,
            })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        Ok(cx.g.conv1d(x, cx.p[self.weight], Some(cx.p[self.bias]), self.stride, self.padding)?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: usize,
    pub beta: usize,
    pub stats: usize,
}

impl BatchNorm {
    pub fn new<S: Scalar>(b: &mut Builder<S>, name: &str, channels: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(BatchNorm {
                gamma: b.add("gamma", Tensor::ones([channels]))?,
                beta: b.add("beta", Tensor::zeros([channels]))?,
                stats: b.add_stats(channels),
            })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let stats = &mut cx.stats[self.stats].1;
        Ok(cx.g.batchnorm1d(x, cx.p[self.gamma], cx.p[self.beta], stats, cx.mode)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    /// Normalizes over trailing dims of shape `shape`.
    pub fn new<S: Scalar>(b: &mut Builder<S>, name: &str, shape: &[usize]) -> Result<Self> {
        b.scope(name, |b| {
            Ok(LayerNorm {
                gamma: b.add("gamma", Tensor::ones(shape.to_vec()))?,
                beta: b.add("beta", Tensor::zeros(shape.to_vec()))?,
            })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        Ok(cx.g.layernorm(x, cx.p[self.gamma], cx.p[self.beta])?)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn new<S: Scalar>(b: &mut Builder<S>, name: &str, fin: usize, fout: usize) -> Result<Self> {
        b.scope(name, |b| {
            let w = kaiming_uniform(&[fout, fin], fin, b.rng);
            Ok(Linear {
                weight: b.add("weight", w)?,
                bias: b.add("bias", Tensor::zeros([fout]))?,
            })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        Ok(cx.g.linear(x, cx.p[self.weight], Some(cx.p[self.bias]))?)
    }
}

/// conv -> BN -> ReLU -> maxpool(K=2, S=1, P=1). Adds one sample.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBlock {
    pub fn new<S: Scalar>(b: &mut Builder<S>, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(ConvBlock {
                conv: Conv::new(b, "conv", cin, cout, k, stride)?,
                bn: BatchNorm::new(b, "bn", cout)?,
            })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let y = self.conv.forward(cx, x)?;
        let y = self.bn.forward(cx, y)?;
        let y = cx.g.relu(y)?;
        Ok(cx.g.maxpool1d(y, 2, 1, 1)?)
    }
}

pub fn dropout<S: Scalar>(cx: &mut Ctx<S>, x: Var, p: f64) -> Result<Var> {
    let mut rng = cx.dropout_rng();
    Ok(cx.g.dropout(x, p, cx.mode, &mut rng)?)
}

/// Residual unit: conv3 -> BN -> ReLU -> conv3 -> BN, plus the input (through
/// a 1x1 projection when channel counts differ), then ReLU.
#[derive(Clone, Debug)]
pub struct BaseBlock {
    pub conv1: Conv,
    pub bn1: BatchNorm,
    pub conv2: Conv,
    pub bn2: BatchNorm,
    pub shortcut: Option<Conv>,
}

impl BaseBlock {
    pub fn new<S: Scalar>(b: &mut Builder<S>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(BaseBlock {
                conv1: Conv::new(b, "conv1", cin, cout, 3, 1)?,
                bn1: BatchNorm::new(b, "bn1", cout)?,
                conv2: Conv::new(b, "conv2", cout, cout, 3, 1)?,
                bn2: BatchNorm::new(b, "bn2", cout)?,
                shortcut: if cin != cout {
                    Some(Conv::new(b, "shortcut", cin, cout, 1, 1)?)
                } else {
                    None
                },
            })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(cx, x)?;
        let y = self.bn1.forward(cx, y)?;
        let y = cx.g.relu(y)?;
        let y = self.conv2.forward(cx, y)?;
        let y = self.bn2.forward(cx, y)?;
        let skip = match &self.shortcut {
            Some(c) => c.forward(cx, x)?,
            None => x,
        };
        let y = cx.g.add(y, skip)?;
        Ok(cx.g.relu(y)?)
    }
}
