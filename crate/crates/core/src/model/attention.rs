//! Dual-resolution attention: residual blocks, channel and spatial attention,
//! LayerNorm over the concatenated result and a projecting BaseBlock.

use mrm_tensor::{Scalar, Var};

use super::layers::{BaseBlock, Builder, Conv, Ctx, LayerNorm, Linear};
use crate::config::ModelConfig;
use crate::error::Result;

/// `sigma(MLP(avg(Z)) + MLP(max(Z)))` with one MLP shared by both pooled vectors.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ChannelAttention {
    pub fn new<S: Scalar>(b: &mut Builder<S>, channels: usize, hidden: usize) -> Result<Self> {
        b.scope("ca", |b| {
            Ok(ChannelAttention {
                fc1: Linear::new(b, "fc1", channels, hidden)?,
                fc2: Linear::new(b, "fc2", hidden, channels)?,
            })
        })
    }

    fn mlp<S: Scalar>(&self, cx: &mut Ctx<S>, v: Var) -> Result<Var> {
        let h = self.fc1.forward(cx, v)?;
        let h = cx.g.relu(h)?;
        self.fc2.forward(cx, h)
    }

    /// `[B, C, L] -> [B, C, 1]`, values in (0, 1).
    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, z: Var) -> Result<Var> {
        let (b, c) = (cx.g.shape(z)[0], cx.g.shape(z)[1]);
        let avg = cx.g.mean_axis(z, 2)?;
        let avg = cx.g.reshape(avg, &[b, c])?;
        let max = cx.g.max_axis(z, 2)?;
        let max = cx.g.reshape(max, &[b, c])?;
        let a = self.mlp(cx, avg)?;
        let m = self.mlp(cx, max)?;
        let s = cx.g.add(a, m)?;
        let s = cx.g.sigmoid(s)?;
        Ok(cx.g.reshape(s, &[b, c, 1])?)
    }
}

/// `sigma(conv(cat[mean_c(Z), max_c(Z)]))`, 2 -> 1 channels, length preserved.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub conv: Conv,
}

impl SpatialAttention {
    pub fn new<S: Scalar>(b: &mut Builder<S>, kernel: usize) -> Result<Self> {
        b.scope("sa", |b| {
            Ok(SpatialAttention {
                conv: Conv::new(b, "conv", 2, 1, kernel, 1)?,
            })
        })
    }

    /// `[B, C, L] -> [B, 1, L]`, values in (0, 1).
    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, z: Var) -> Result<Var> {
        let avg = cx.g.mean_axis(z, 1)?;
        let max = cx.g.max_axis(z, 1)?;
        let cat = cx.g.concat(&[avg, max], 1)?;
        let y = self.conv.forward(cx, cat)?;
        Ok(cx.g.sigmoid(y)?)
    }
}

#[derive(Clone, Debug)]
pub struct AttentionFusionLayer {
    pub blocks: Vec<BaseBlock>,
    pub ca: ChannelAttention,
    pub sa: SpatialAttention,
    pub ln: LayerNorm,
    pub proj: BaseBlock,
}

impl AttentionFusionLayer {
    pub fn new<S: Scalar>(b: &mut Builder<S>, name: &str, cfg: &ModelConfig, channels: usize, len: usize) -> Result<Self> {
        b.scope(name, |b| {
            let blocks = (1..=3)
                .map(|i| BaseBlock::new(b, &format!("block{i}"), channels, channels))
                .collect::<Result<Vec<_>>>()?;
            Ok(AttentionFusionLayer {
                blocks,
                ca: ChannelAttention::new(b, channels, cfg.hidden(channels))?,
                sa: SpatialAttention::new(b, cfg.spatial_kernel)?,
                ln: LayerNorm::new(b, "ln", &[2 * channels, len])?,
                proj: BaseBlock::new(b, "proj", 2 * channels, channels)?,
            })
        })
    }

    /// `cat[ca * U, sa * U]` on channels -> LN -> projecting BaseBlock.
    pub fn fuse<S: Scalar>(&self, cx: &mut Ctx<S>, u: Var, ca: Var, sa: Var) -> Result<Var> {
        let a = cx.g.mul(u, ca)?;
        let s = cx.g.mul(u, sa)?;
        let cat = cx.g.concat(&[a, s], 1)?;
        let y = self.ln.forward(cx, cat)?;
        self.proj.forward(cx, y)
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, z: Var) -> Result<Var> {
        let mut u = z;
        for block in &self.blocks {
            u = block.forward(cx, u)?;
        }
        let ca = self.ca.forward(cx, u)?;
        let sa = self.sa.forward(cx, u)?;
        self.fuse(cx, u, ca, sa)
    }
}

/// `Linear(LN(AvgPool(Z)))`, raw logits.
#[derive(Clone, Debug)]
pub struct Head {
    pub ln: LayerNorm,
    pub fc: Linear,
}

impl Head {
    pub fn new<S: Scalar>(b: &mut Builder<S>, name: &str, channels: usize, classes: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(Head {
                ln: LayerNorm::new(b, "ln", &[channels])?,
                fc: Linear::new(b, "fc", channels, classes)?,
            })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, z: Var) -> Result<Var> {
        let pooled = cx.g.global_avg_pool(z)?;
        let y = self.ln.forward(cx, pooled)?;
        self.fc.forward(cx, y)
    }
}
