//! Brute-force reference implementations in f64, written directly from the
//! definitions and sharing no code with the library.

#![allow(dead_code)]

pub fn conv1d(
    x: &[f64],
    (b, cin, len): (usize, usize, usize),
    w: &[f64],
    (cout, k): (usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let lout = (len + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(b * cout * lout);
    for bi in 0..b {
        for co in 0..cout {
            for t in 0..lout {
                let mut acc = bias[co];
                for ci in 0..cin {
                    for kk in 0..k {
                        let pos = (t * stride + kk) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < len {
                            acc += w[(co * cin + ci) * k + kk] * x[(bi * cin + ci) * len + pos as usize];
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Max over each window of the padded row; padding never wins.
pub fn maxpool1d(x: &[f64], rows: usize, len: usize, k: usize, stride: usize, pad: usize) -> Vec<f64> {
    let padded = len + 2 * pad;
    let lout = (padded - k) / stride + 1;
    let mut out = Vec::new();
    for r in 0..rows {
        let row: Vec<Option<f64>> = (0..padded)
            .map(|i| {
                let j = i as isize - pad as isize;
                (j >= 0 && (j as usize) < len).then(|| x[r * len + j as usize])
            })
            .collect();
        for t in 0..lout {
            let best = row[t * stride..t * stride + k]
                .iter()
                .flatten()
                .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            out.push(best);
        }
    }
    out
}

/// Two-pass batch statistics per channel over (B, L).
pub fn batchnorm_train(x: &[f64], (b, c, len): (usize, usize, usize), gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let idx: Vec<usize> = (0..b).flat_map(|bi| (0..len).map(move |l| (bi * c + ch) * len + l)).collect();
        let n = idx.len() as f64;
        let mean = idx.iter().map(|&i| x[i]).sum::<f64>() / n;
        let var = idx.iter().map(|&i| (x[i] - mean).powi(2)).sum::<f64>() / n;
        for &i in &idx {
            out[i] = gamma[ch] * (x[i] - mean) / (var + eps).sqrt() + beta[ch];
        }
    }
    out
}

/// Mean of `-[y ln s + (1 - y) ln(1 - s)]` with `s = 1 / (1 + e^-z)`.
pub fn bce(z: &[f64], y: &[f64]) -> f64 {
    let total: f64 = z
        .iter()
        .zip(y)
        .map(|(&z, &y)| {
            let s = 1.0 / (1.0 + (-z).exp());
            -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
        })
        .sum();
    total / z.len() as f64
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}
