//! Averaged-periodogram estimate of the log-sensitivity integral.

use log::warn;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::EstimatorError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodeOptions {
    pub segment: usize,
    /// Fraction of each segment shared with the next.
    pub overlap: f64,
    /// Mean-drift z-score above which the record is flagged.
    pub drift_z: f64,
}

impl Default for BodeOptions {
    fn default() -> Self {
        Self { segment: 1 << 12, overlap: 0.5, drift_z: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodeEstimate {
    /// `int_{-1/2}^{1/2} 1/2 log2(S_y / S_v) df`.
    pub bits: f64,
    pub segments: usize,
    pub nonstationary: bool,
}

/// One-sided Welch power spectrum on bins `0 ..= segment/2` (Hann taper,
/// per-segment mean removed). Returns the spectrum and the segment count.
pub fn welch_psd(signal: &[f64], segment: usize, overlap: f64) -> Result<(Vec<f64>, usize), EstimatorError> {
    if segment < 8 || !(0.0..1.0).contains(&overlap) {
        return Err(EstimatorError::Input("segment must be >= 8 with overlap in [0, 1)".into()));
    }
    if signal.len() < segment {
        return Err(EstimatorError::Input(format!("record of {} samples is shorter than one segment", signal.len())));
    }
    let hop = ((segment as f64 * (1.0 - overlap)).round() as usize).max(1);
    let window: Vec<f64> = (0..segment)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / segment as f64).cos())
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(segment);
    let mut buf = vec![Complex::new(0.0, 0.0); segment];
    let mut psd = vec![0.0; segment / 2 + 1];
    let mut count = 0;
    let mut start = 0;
    while start + segment <= signal.len() {
        let seg = &signal[start..start + segment];
        let mean = seg.iter().sum::<f64>() / segment as f64;
        for (b, (x, w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in psd.iter_mut().zip(&buf) {
            *p += b.norm_sqr();
        }
        count += 1;
        start += hop;
    }
    let scale = 1.0 / (count as f64 * window.iter().map(|w| w * w).sum::<f64>());
    psd.iter_mut().for_each(|p| *p *= scale);
    Ok((psd, count))
}

/// z-score of the difference between first-half and second-half means.
/// The block-mean variance comes from successive differences, so a slow
/// trend does not inflate it.
fn mean_drift_z(signal: &[f64], block: usize) -> f64 {
    let means: Vec<f64> = signal.chunks_exact(block).map(|c| c.iter().sum::<f64>() / block as f64).collect();
    if means.len() < 4 {
        return 0.0;
    }
    let half = means.len() / 2;
    let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (a, b) = (avg(&means[..half]), avg(&means[half..]));
    let var = means.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (2 * (means.len() - 1)) as f64;
    let se = (var / half as f64 + var / (means.len() - half) as f64).sqrt();
    if se == 0.0 {
        if a == b { 0.0 } else { f64::INFINITY }
    } else {
        (a - b).abs() / se
    }
}

/// Log-sensitivity integral in bits from the output record `y` and the
/// channel noise record `v` (burn-in already removed).
pub fn bode_integral(y: &[f64], v: &[f64], opts: &BodeOptions) -> Result<BodeEstimate, EstimatorError> {
    if y.len() != v.len() {
        return Err(EstimatorError::Input("output and noise records differ in length".into()));
    }
    if y.iter().chain(v).any(|s| !s.is_finite()) {
        return Err(EstimatorError::Input("records must be finite".into()));
    }
    let (sy, segments) = welch_psd(y, opts.segment, opts.overlap)?;
    let (sv, _) = welch_psd(v, opts.segment, opts.overlap)?;
    if sv.iter().skip(1).any(|p| *p <= 0.0) || sy.iter().skip(1).any(|p| *p <= 0.0) {
        return Err(EstimatorError::Degenerate("spectrum vanishes at some frequency".into()));
    }
    // the DC bin is biased low by mean removal; reuse its neighbor
    let ratio: Vec<f64> = (0..sy.len()).map(|k| k.max(1)).map(|k| (sy[k] / sv[k]).log2()).collect();
    let m = ratio.len() - 1;
    let df = 1.0 / opts.segment as f64;
    let inner: f64 = ratio[1..m].iter().sum();
    let bits = df * (inner + 0.5 * (ratio[0] + ratio[m]));
    let nonstationary = mean_drift_z(y, opts.segment) > opts.drift_z;
    if nonstationary {
        warn!("output record shows mean drift; the spectral estimate assumes stationarity");
    }
    Ok(BodeEstimate { bits, segments, nonstationary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn white(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn identical_records_integrate_to_zero() {
        let v = white(1 << 16, 1);
        let est = bode_integral(&v, &v, &BodeOptions::default()).unwrap();
        assert_eq!(est.bits, 0.0);
        assert!(!est.nonstationary);
    }

    #[test]
    fn doubled_white_noise_gives_one_bit() {
        let v = white(1 << 18, 2);
        let y: Vec<f64> = white(1 << 18, 3).iter().map(|s| 2.0 * s).collect();
        let est = bode_integral(&y, &v, &BodeOptions::default()).unwrap();
        assert!((est.bits - 1.0).abs() < 0.1, "{}", est.bits);
    }

    #[test]
    fn white_noise_psd_is_flat() {
        let (psd, segs) = welch_psd(&white(1 << 16, 4), 256, 0.5).unwrap();
        assert_eq!(segs, (65536 - 256) / 128 + 1);
        let mean = psd[1..128].iter().sum::<f64>() / 127.0;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn ramp_is_flagged() {
        let v = white(1 << 16, 5);
        let y: Vec<f64> = v.iter().enumerate().map(|(i, s)| s + i as f64 * 1e-3).collect();
        assert!(bode_integral(&y, &v, &BodeOptions::default()).unwrap().nonstationary);
    }

    #[test]
    fn input_errors() {
        let v = white(100, 6);
        assert!(bode_integral(&v, &v, &BodeOptions::default()).is_err());
        assert!(bode_integral(&v, &v[..50], &BodeOptions::default()).is_err());
    }
}
