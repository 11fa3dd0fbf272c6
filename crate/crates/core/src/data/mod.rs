//! Dataset ingestion: manifests of MRMT signal files, resampling to 100 Hz,
//! the fixed fold protocol, batching, and a synthetic generator.

mod manifest;
mod preprocess;
mod split;
mod synth;

pub use manifest::{load_dataset, write_dataset, Manifest, ManifestEntry, Task};
pub use preprocess::{preprocess_record, TARGET_FS};
pub use split::{batch_iterator, split_folds, Batch, Batches, Splits, TEST_FOLD, TRAIN_FOLDS, VAL_FOLD};
pub use synth::{synth_generate, SynthConfig};

use mrm_tensor::Tensor;

pub const NUM_LEADS: usize = 12;
pub const NUM_FOLDS: u8 = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct EcgRecord {
    pub id: String,
    /// `[12, n]` at 100 Hz.
    pub signal: Tensor<f32>,
    /// Multi-hot over the dataset vocabulary.
    pub labels: Vec<f32>,
    /// 1..=10.
    pub fold: u8,
}

impl EcgRecord {
    pub fn is_labeled(&self) -> bool {
        self.labels.iter().any(|&v| v > 0.0)
    }

    /// Label codes that are switched on, in vocabulary order.
    pub fn codes<'a>(&self, vocabulary: &'a [String]) -> Vec<&'a str> {
        self.labels
            .iter()
            .zip(vocabulary)
            .filter(|(&v, _)| v > 0.0)
            .map(|(_, c)| c.as_str())
            .collect()
    }
}

/// An immutable, fully validated set of preprocessed records.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub vocabulary: Vec<String>,
    pub records: Vec<EcgRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.vocabulary.len()
    }

    /// Samples per lead; every record shares it.
    pub fn signal_len(&self) -> usize {
        self.records.first().map_or(0, |r| r.signal.dim(1))
    }

    /// `indices` without unlabeled records.
    pub fn labeled(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().copied().filter(|&i| self.records[i].is_labeled()).collect()
    }

    /// Stacks `indices` into `X [B, 12, n]` and `Y [B, K]`.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        let (n, k) = (self.signal_len(), self.num_classes());
        let mut x = Vec::with_capacity(indices.len() * NUM_LEADS * n);
        let mut y = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            x.extend_from_slice(self.records[i].signal.data());
            y.extend_from_slice(&self.records[i].labels);
        }
        let b = indices.len();
        (
            Tensor::new([b, NUM_LEADS, n], x).expect("records share one shape"),
            Tensor::new([b, k], y).expect("labels match vocabulary"),
        )
    }
}
