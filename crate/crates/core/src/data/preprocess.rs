use mrm_tensor::Tensor;

use crate::error::{config_err, Result};

pub const TARGET_FS: f64 = 100.0;

/// Linear interpolation of `x` at fractional index `pos`.
fn interp(x: &[f32], pos: f64) -> f32 {
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if frac == 0.0 || i + 1 >= x.len() {
        return x[i.min(x.len() - 1)];
    }
    let (a, b) = (f64::from(x[i]), f64::from(x[i + 1]));
    (a + (b - a) * frac) as f32
}

/// Resamples one lead to `len` points spaced `step` raw samples apart.
fn resample(x: &[f32], len: usize, step: f64) -> Vec<f32> {
    (0..len).map(|j| interp(x, j as f64 * step)).collect()
}

/// `[leads, L_raw]` at `fs_raw` Hz to `[leads, length]` at 100 Hz: linear
/// resampling, then truncation, or a linear stretch when too short.
pub fn preprocess_record(raw: &Tensor<f32>, fs_raw: f64, length: usize) -> Result<Tensor<f32>> {
    if raw.rank() != 2 {
        return Err(config_err(format!("signal must be [leads, L], got {:?}", raw.shape())));
    }
    let (leads, lraw) = (raw.dim(0), raw.dim(1));
    if lraw < 2 {
        return Err(config_err(format!("signal has {lraw} samples per lead; need at least 2")));
    }
    if fs_raw.is_nan() || fs_raw < TARGET_FS {
        return Err(config_err(format!("sampling rate {fs_raw} Hz is below {TARGET_FS} Hz")));
    }
    if length < 2 {
        return Err(config_err(format!("target length {length} is too short")));
    }
    let step = fs_raw / TARGET_FS;
    // Last 100 Hz instant that still falls inside the raw record.
    let m = ((lraw - 1) as f64 / step).floor() as usize + 1;
    let mut out = Vec::with_capacity(leads * length);
    for lead in raw.data().chunks(lraw) {
        let at_100 = if step == 1.0 { lead.to_vec() } else { resample(lead, m, step) };
        if m >= length {
            out.extend_from_slice(&at_100[..length]);
        } else {
            out.extend(resample(&at_100, length, (m - 1) as f64 / (length - 1) as f64));
        }
    }
    Ok(Tensor::new([leads, length], out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(fs: f64, len: usize) -> Tensor<f32> {
        Tensor::from_fn([12, len], |i| ((i % len) as f64 / fs) as f32)
    }

    #[test]
    fn downsamples_500hz_to_1000_samples() {
        let out = preprocess_record(&Tensor::zeros([12, 5000]), 500.0, 1000).unwrap();
        assert_eq!(out.shape(), &[12, 1000]);
    }

    #[test]
    fn passthrough_at_100hz_is_bit_identical() {
        let x = Tensor::from_fn([12, 1000], |i| (i as f32 * 0.37).sin());
        assert_eq!(preprocess_record(&x, 100.0, 1000).unwrap(), x);
    }

    #[test]
    fn ramp_at_200hz_matches_the_line() {
        let out = preprocess_record(&ramp(200.0, 2400), 200.0, 1000).unwrap();
        for (j, &v) in out.data()[..1000].iter().enumerate() {
            assert!((f64::from(v) - j as f64 / 100.0).abs() < 1e-6, "sample {j}: {v}");
        }
    }

    #[test]
    fn short_records_are_stretched_linearly() {
        // 5 s at 100 Hz, value = t seconds; stretched to 1000 points over the same span.
        let out = preprocess_record(&ramp(100.0, 500), 100.0, 1000).unwrap();
        let last = 4.99;
        for (j, &v) in out.data()[..1000].iter().enumerate() {
            let want = last * j as f64 / 999.0;
            assert!((f64::from(v) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn constants_survive_exactly() {
        let x = Tensor::full([12, 777], 0.3f32);
        for fs in [100.0, 250.0, 360.0, 500.0] {
            let out = preprocess_record(&x, fs, 1000).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.3));
        }
    }

    #[test]
    fn idempotent_on_its_own_output() {
        let x = Tensor::from_fn([12, 3001], |i| (i as f32 * 0.01).cos());
        let once = preprocess_record(&x, 300.0, 1000).unwrap();
        assert_eq!(preprocess_record(&once, 100.0, 1000).unwrap(), once);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(preprocess_record(&Tensor::zeros([12, 1]), 100.0, 1000).is_err());
        assert!(preprocess_record(&Tensor::zeros([12, 100]), 50.0, 1000).is_err());
    }
}
