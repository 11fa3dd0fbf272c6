use std::fmt;
use std::str::FromStr;

use mrm_tensor::conv_out_len;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Architectural hyperparameters. Defaults give the full-size network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_leads: usize,
    pub input_length: usize,
    /// Channels of the long (2N) branch, C.
    pub low_channels: usize,
    /// Channels of the short (N) branch; must be 2C.
    pub high_channels: usize,
    pub stem_channels: Vec<usize>,
    pub stem_kernels: Vec<usize>,
    pub fusion_kernels: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub num_classes: usize,
    pub dropout_p: f64,
    pub attention_reduction: usize,
    pub spatial_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_leads: 12,
            input_length: 1000,
            low_channels: 128,
            high_channels: 256,
            stem_channels: vec![32, 64, 128, 128],
            stem_kernels: vec![11, 7, 5, 3],
            fusion_kernels: vec![3, 13, 23, 33],
            alpha: 0.01,
            beta: 0.01,
            gamma: 0.1,
            num_classes: 5,
            dropout_p: 0.1,
            attention_reduction: 16,
            spatial_kernel: 3,
        }
    }
}

/// Feature lengths implied by a config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lengths {
    /// After the conv stem.
    pub stem: usize,
    /// Fusion output of the stride-1 branch before trimming.
    pub long_raw: usize,
    /// Fusion output of the stride-2 branch before trimming.
    pub short_raw: usize,
    /// N: the short branch keeps N samples, the long branch 2N.
    pub n: usize,
}

impl ModelConfig {
    /// Channel-attention hidden width, clamped to at least 1.
    pub fn hidden(&self, channels: usize) -> usize {
        (channels / self.attention_reduction).max(1)
    }

    pub fn stem_out(&self) -> usize {
        *self.stem_channels.last().unwrap_or(&self.num_leads)
    }

    pub fn lengths(&self) -> Result<Lengths> {
        // Each stem stage: same-padded conv, then a K=2/S=1/P=1 maxpool (+1 sample).
        let mut len = self.input_length;
        for &k in &self.stem_kernels {
            len = conv_out_len(len, k, 1, k / 2)
                .ok_or_else(|| config_err(format!("stem kernel {k} does not fit length {len}")))?
                + 1;
        }
        let branch = |stride: usize| -> Result<usize> {
            let mut out = None;
            for &k in self.fusion_kernels.iter().chain(std::iter::once(&3)) {
                let l = conv_out_len(len, k, stride, k / 2)
                    .ok_or_else(|| config_err(format!("fusion kernel {k} does not fit length {len}")))?;
                if *out.get_or_insert(l) != l {
                    return Err(config_err(format!(
                        "fusion paths disagree on length at stride {stride}: {} vs {l}",
                        out.unwrap()
                    )));
                }
            }
            Ok(out.unwrap() + 1)
        };
        let (long_raw, short_raw) = (branch(1)?, branch(2)?);
        let n = (long_raw / 2).min(short_raw);
        if n == 0 {
            return Err(config_err(format!("input_length {} leaves no samples per branch", self.input_length)));
        }
        Ok(Lengths {
            stem: len,
            long_raw,
            short_raw,
            n,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.high_channels != 2 * self.low_channels {
            return Err(config_err(format!(
                "high_channels ({}) must equal 2 x low_channels ({})",
                self.high_channels, self.low_channels
            )));
        }
        if self.low_channels == 0 || self.num_leads == 0 || self.num_classes == 0 {
            return Err(config_err("low_channels, num_leads and num_classes must be positive"));
        }
        if self.stem_channels.is_empty() || self.stem_channels.len() != self.stem_kernels.len() {
            return Err(config_err(format!(
                "stem_channels {:?} and stem_kernels {:?} must be non-empty and equally long",
                self.stem_channels, self.stem_kernels
            )));
        }
        if self.stem_channels.contains(&0) {
            return Err(config_err("stem channel counts must be positive"));
        }
        if self.fusion_kernels.is_empty() {
            return Err(config_err("fusion_kernels must not be empty"));
        }
        let kernels = self.stem_kernels.iter().chain(&self.fusion_kernels).chain(std::iter::once(&self.spatial_kernel));
        if let Some(k) = kernels.clone().find(|&&k| k % 2 == 0) {
            return Err(config_err(format!("kernel sizes must be odd, got {k}")));
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(config_err(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(config_err(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p)));
        }
        if self.attention_reduction == 0 {
            return Err(config_err("attention_reduction must be >= 1"));
        }
        self.lengths()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Mrm,
    FAddition,
    FConcat,
    LowRs,
    HighRs,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::Mrm,
        VariantKind::FAddition,
        VariantKind::FConcat,
        VariantKind::LowRs,
        VariantKind::HighRs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Mrm => "mrm",
            VariantKind::FAddition => "f_addition",
            VariantKind::FConcat => "f_concat",
            VariantKind::LowRs => "low_rs",
            VariantKind::HighRs => "high_rs",
        }
    }

    /// Whether the variant produces two heads and mutual losses.
    pub fn is_dual(self) -> bool {
        self == VariantKind::Mrm
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| config_err(format!("unknown variant `{s}` (expected mrm, f_addition, f_concat, low_rs or high_rs)")))
    }
}
