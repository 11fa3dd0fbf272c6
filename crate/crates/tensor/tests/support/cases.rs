//! Random small instances for each op, scored against the brute-force
//! oracles. Shared with the workspace acceptance suite.

use mrm_tensor::{Graph, Mode, RunningStats, Scalar, Tensor, BN_EPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Worst absolute error over this many cases per op.
pub const CASES: u64 = 100;

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Rounds through `S` so the oracle sees exactly the values the op sees.
pub fn as_input<S: Scalar>(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| S::of(x).f64()).collect()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn conv_worst<S: Scalar>() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let (b, cin, cout) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let k = rng.random_range(1..6);
        let (stride, pad) = (rng.random_range(1..4), rng.random_range(0..3));
        let len = rng.random_range(k.max(2)..12);
        let x = as_input::<S>(&rand_vec(&mut rng, b * cin * len));
        let w = as_input::<S>(&rand_vec(&mut rng, cout * cin * k));
        let bias = as_input::<S>(&rand_vec(&mut rng, cout));
        let mut g = Graph::<S>::new();
        let xv = g.constant(Tensor::from_f64([b, cin, len], &x).unwrap());
        let wv = g.constant(Tensor::from_f64([cout, cin, k], &w).unwrap());
        let bv = g.constant(Tensor::from_f64([cout], &bias).unwrap());
        let y = g.conv1d(xv, wv, Some(bv), stride, pad).unwrap();
        let want = crate::oracle::conv1d(&x, (b, cin, len), &w, (cout, k), &bias, stride, pad);
        worst = worst.max(max_diff(&g.value(y).to_f64_vec(), &want));
    }
    worst
}

pub fn pool_worst<S: Scalar>() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let (rows, k) = (rng.random_range(1..4), rng.random_range(1..5));
        let (stride, pad) = (rng.random_range(1..3), rng.random_range(0..k));
        let len = rng.random_range(k.max(1)..10);
        let x = as_input::<S>(&rand_vec(&mut rng, rows * len));
        let mut g = Graph::<S>::new();
        let xv = g.constant(Tensor::from_f64([1, rows, len], &x).unwrap());
        let y = g.maxpool1d(xv, k, stride, pad).unwrap();
        worst = worst.max(max_diff(&g.value(y).to_f64_vec(), &crate::oracle::maxpool1d(&x, rows, len, k, stride, pad)));
    }
    worst
}

pub fn bn_worst<S: Scalar>() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let (b, c, len) = (rng.random_range(1..5), rng.random_range(1..4), rng.random_range(2..9));
        let x = as_input::<S>(&rand_vec(&mut rng, b * c * len));
        let gamma = as_input::<S>(&rand_vec(&mut rng, c));
        let beta = as_input::<S>(&rand_vec(&mut rng, c));
        let mut g = Graph::<S>::new();
        let xv = g.constant(Tensor::from_f64([b, c, len], &x).unwrap());
        let gv = g.constant(Tensor::from_f64([c], &gamma).unwrap());
        let bv = g.constant(Tensor::from_f64([c], &beta).unwrap());
        let mut stats = RunningStats::new(c);
        let y = g.batchnorm1d(xv, gv, bv, &mut stats, Mode::Train).unwrap();
        let want = crate::oracle::batchnorm_train(&x, (b, c, len), &gamma, &beta, BN_EPS);
        worst = worst.max(max_diff(&g.value(y).to_f64_vec(), &want));
    }
    worst
}

pub fn bce_worst<S: Scalar>() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let (b, k) = (rng.random_range(1..5), rng.random_range(1..6));
        let z = as_input::<S>(&(0..b * k).map(|_| rng.random_range(-6.0..6.0)).collect::<Vec<_>>());
        let y: Vec<f64> = (0..b * k).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let mut g = Graph::<S>::new();
        let zv = g.constant(Tensor::from_f64([b, k], &z).unwrap());
        let l = g.bce_with_logits(zv, &Tensor::from_f64([b, k], &y).unwrap()).unwrap();
        worst = worst.max((g.value(l).item().f64() - crate::oracle::bce(&z, &y)).abs());
    }
    worst
}

pub fn kl_worst<S: Scalar>() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let d = rng.random_range(1..9);
        let p: Vec<f64> = crate::oracle::softmax(&rand_vec(&mut rng, d).iter().map(|v| 3.0 * v).collect::<Vec<_>>());
        let q: Vec<f64> = crate::oracle::softmax(&rand_vec(&mut rng, d).iter().map(|v| 3.0 * v).collect::<Vec<_>>());
        let (p, q) = (as_input::<S>(&p), as_input::<S>(&q));
        let mut g = Graph::<S>::new();
        let pv = g.constant(Tensor::from_f64([1, d], &p).unwrap());
        let qv = g.constant(Tensor::from_f64([1, d], &q).unwrap());
        let l = g.kl_div(pv, qv).unwrap();
        worst = worst.max((g.value(l).item().f64() - crate::oracle::kl(&p, &q)).abs());
    }
    worst
}
