use mrm_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;

pub const TRAIN_FOLDS: std::ops::RangeInclusive<u8> = 1..=8;
pub const VAL_FOLD: u8 = 9;
pub const TEST_FOLD: u8 = 10;

/// Record indices per split; together they partition the dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Folds 1-8 train, 9 validation, 10 test. Empty splits only warn.
pub fn split_folds(ds: &Dataset) -> Splits {
    let mut s = Splits::default();
    for (i, r) in ds.records.iter().enumerate() {
        match r.fold {
            f if TRAIN_FOLDS.contains(&f) => s.train.push(i),
            VAL_FOLD => s.val.push(i),
            _ => s.test.push(i),
        }
    }
    for (name, part) in [("train", &s.train), ("validation", &s.val), ("test", &s.test)] {
        if part.is_empty() {
            log::warn!("{name} split is empty");
        }
    }
    s
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// Dataset indices of the rows, in order.
    pub indices: Vec<usize>,
    pub x: Tensor<f32>,
    pub y: Tensor<f32>,
}

/// Mini-batches over a split. The last batch may be short.
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

/// Batches of `indices` in stored order, or shuffled by `shuffle_seed`.
pub fn batch_iterator<'a>(ds: &'a Dataset, indices: &[usize], batch_size: usize, shuffle_seed: Option<u64>) -> Batches<'a> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order = indices.to_vec();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Batches {
        ds,
        order,
        batch_size,
        pos: 0,
    }
}

impl Batches<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let (x, y) = self.ds.gather(&indices);
        Some(Batch { indices, x, y })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EcgRecord, Task};

    fn toy(folds: &[u8]) -> Dataset {
        Dataset {
            task: Task::Synthetic,
            vocabulary: vec!["a".into()],
            records: folds
                .iter()
                .enumerate()
                .map(|(i, &fold)| EcgRecord {
                    id: format!("r{i}"),
                    signal: Tensor::full([12, 4], i as f32),
                    labels: vec![1.0],
                    fold,
                })
                .collect(),
        }
    }

    #[test]
    fn one_record_per_fold_splits_eight_one_one() {
        let s = split_folds(&toy(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]));
        assert_eq!((s.train.len(), s.val, s.test), (8, vec![8], vec![9]));
    }

    #[test]
    fn train_only_folds_leave_val_and_test_empty() {
        let s = split_folds(&toy(&[1, 3, 8, 8]));
        assert_eq!(s.train, vec![0, 1, 2, 3]);
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn keeps_the_partial_last_batch() {
        let folds = vec![1; 130];
        let ds = toy(&folds);
        let idx: Vec<usize> = (0..130).collect();
        let sizes: Vec<usize> = batch_iterator(&ds, &idx, 64, Some(3)).map(|b| b.x.dim(0)).collect();
        assert_eq!(sizes, vec![64, 64, 2]);
    }

    #[test]
    fn shuffle_is_seeded_and_covers_each_record_once() {
        let ds = toy(&[1; 50]);
        let idx: Vec<usize> = (0..50).collect();
        let order = |seed| batch_iterator(&ds, &idx, 8, Some(seed)).flat_map(|b| b.indices).collect::<Vec<_>>();
        assert_eq!(order(5), order(5));
        assert_ne!(order(5), order(6));
        let mut seen = order(5);
        seen.sort_unstable();
        assert_eq!(seen, idx);
    }

    #[test]
    fn batch_rows_follow_the_indices() {
        let ds = toy(&[1; 5]);
        let b = batch_iterator(&ds, &[4, 2], 8, None).next().unwrap();
        assert_eq!(b.x.shape(), &[2, 12, 4]);
        assert_eq!(b.x.data()[0], 4.0);
        assert_eq!(b.x.data()[48], 2.0);
    }
}
