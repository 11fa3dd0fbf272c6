//! Multi-scale convolution module: a shared conv stem followed by one
//! multi-scale fusion block per branch.

use mrm_tensor::{Scalar, Tensor, Var};

use super::layers::{dropout, BatchNorm, Builder, Conv, ConvBlock, Ctx};
use crate::config::ModelConfig;
use crate::error::{config_err, Result};

#[derive(Clone, Debug)]
pub struct Stem {
    pub blocks: Vec<ConvBlock>,
}

impl Stem {
    pub fn new<S: Scalar>(b: &mut Builder<S>, cfg: &ModelConfig) -> Result<Self> {
        b.scope("stem", |b| {
            let mut cin = cfg.num_leads;
            let mut blocks = Vec::new();
            for (i, (&cout, &k)) in cfg.stem_channels.iter().zip(&cfg.stem_kernels).enumerate() {
                blocks.push(ConvBlock::new(b, &format!("block{}", i + 1), cin, cout, k, 1)?);
                cin = cout;
            }
            Ok(Stem { blocks })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let want = self.blocks[0].conv.weight;
        let leads = cx.g.value(cx.p[want]).dim(1);
        let got = cx.g.shape(x).to_vec();
        if got.len() != 3 || got[1] != leads {
            return Err(config_err(format!("expected input [B, {leads}, L], got {got:?}")));
        }
        let mut y = x;
        for block in &self.blocks {
            y = block.forward(cx, y)?;
        }
        Ok(y)
    }
}

/// Parallel same-padded convs with different kernels, mixed by softmax
/// weights, then BN -> ReLU -> dropout -> maxpool; added to a K=3 ConvBlock
/// over the same input.
#[derive(Clone, Debug)]
pub struct MultiScaleFusion {
    pub paths: Vec<Conv>,
    pub mix: usize,
    pub bn: BatchNorm,
    pub block: ConvBlock,
    pub dropout_p: f64,
}

impl MultiScaleFusion {
    pub fn new<S: Scalar>(b: &mut Builder<S>, name: &str, cfg: &ModelConfig, cout: usize, stride: usize) -> Result<Self> {
        let cin = cfg.stem_out();
        b.scope(name, |b| {
            let paths = cfg
                .fusion_kernels
                .iter()
                .enumerate()
                .map(|(i, &k)| Conv::new(b, &format!("path{}", i + 1), cin, cout, k, stride))
                .collect::<Result<Vec<_>>>()?;
            // Zero logits: the first forward is a plain average of the paths.
            let mix = b.add("mix", Tensor::zeros([paths.len()]))?;
            Ok(MultiScaleFusion {
                paths,
                mix,
                bn: BatchNorm::new(b, "bn", cout)?,
                block: ConvBlock::new(b, "block2", cin, cout, 3, stride)?,
                dropout_p: cfg.dropout_p,
            })
        })
    }

    /// The softmax-weighted sum of the path outputs, before BN.
    pub fn mixed<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let outs = self.paths.iter().map(|c| c.forward(cx, x)).collect::<Result<Vec<_>>>()?;
        let w = cx.g.softmax(cx.p[self.mix])?;
        Ok(cx.g.weighted_sum(&outs, w)?)
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let y = self.mixed(cx, x)?;
        let y = self.bn.forward(cx, y)?;
        let y = cx.g.relu(y)?;
        let y = dropout(cx, y, self.dropout_p)?;
        let y = cx.g.maxpool1d(y, 2, 1, 1)?;
        let z = self.block.forward(cx, x)?;
        let (ys, zs) = (cx.g.shape(y).to_vec(), cx.g.shape(z).to_vec());
        if ys != zs {
            return Err(config_err(format!("fusion path {ys:?} and ConvBlock2 path {zs:?} disagree")));
        }
        Ok(cx.g.add(y, z)?)
    }
}
