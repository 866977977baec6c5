//! Nearest-neighbor differential entropy (Kozachenko-Leonenko) in the
//! max-norm, and entropy growth rates across time snapshots.

use log::warn;

use super::stats::{digamma, least_squares, LineFit};
use super::EstimatorError;

pub const DEFAULT_NEIGHBORS: usize = 4;
pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    pub bits: f64,
    pub samples: usize,
    pub neighbors: usize,
    /// Points whose k-th neighbor sits at distance zero; excluded from the
    /// log-distance average.
    pub zero_distances: usize,
}

impl EntropyEstimate {
    pub fn degenerate(&self) -> bool {
        self.zero_distances > 0
    }
}

/// Distance to the `k`-th nearest neighbor of every point, max-norm.
/// `samples` is row-major with `dim` columns.
pub fn knn_distances(samples: &[f64], dim: usize, k: usize) -> Vec<f64> {
    let n = samples.len() / dim;
    let point = |i: usize| &samples[i * dim..(i + 1) * dim];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| point(a)[0].total_cmp(&point(b)[0]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().flat_map(|&i| point(i).iter().copied()).collect();
    let row = |p: usize| &sorted[p * dim..(p + 1) * dim];
    let cheb = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));

    let mut out = vec![0.0; n];
    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    for p in 0..n {
        best.clear();
        let me = row(p);
        let insert = |best: &mut Vec<f64>, d: f64| {
            if best.len() < k || d < best[best.len() - 1] {
                let at = best.partition_point(|v| *v <= d);
                best.insert(at, d);
                if best.len() > k {
                    best.pop();
                }
            }
        };
        let (mut left, mut right) = (p as isize - 1, p + 1);
        loop {
            let bound = if best.len() == k { best[k - 1] } else { f64::INFINITY };
            let l_gap = if left >= 0 { me[0] - row(left as usize)[0] } else { f64::INFINITY };
            let r_gap = if right < n { row(right)[0] - me[0] } else { f64::INFINITY };
            if l_gap.min(r_gap) > bound || (l_gap.is_infinite() && r_gap.is_infinite()) {
                break;
            }
            if l_gap <= r_gap {
                insert(&mut best, cheb(me, row(left as usize)));
                left -= 1;
            } else {
                insert(&mut best, cheb(me, row(right)));
                right += 1;
            }
        }
        out[order[p]] = best[k - 1];
    }
    out
}

/// Differential entropy in bits from `n` samples of dimension `dim`.
pub fn entropy_estimate(samples: &[f64], dim: usize, k: usize) -> Result<EntropyEstimate, EstimatorError> {
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(EstimatorError::Input("sample buffer is not a whole number of rows".into()));
    }
    let n = samples.len() / dim;
    if n < MIN_SAMPLES {
        return Err(EstimatorError::Input(format!("need at least {MIN_SAMPLES} samples, got {n}")));
    }
    if k == 0 || k >= n {
        return Err(EstimatorError::Input("neighbor order must satisfy 1 <= k < n".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(EstimatorError::Input("samples must be finite".into()));
    }
    let distances = knn_distances(samples, dim, k);
    let mut zero = 0usize;
    let mut log_sum = 0.0;
    for d in &distances {
        if *d > 0.0 {
            log_sum += d.ln();
        } else {
            zero += 1;
        }
    }
    if zero == n {
        return Err(EstimatorError::Degenerate("every k-th neighbor distance is zero".into()));
    }
    if zero > 0 {
        warn!("{zero} of {n} samples have zero k-th neighbor distance; estimate is unreliable");
    }
    let d = dim as f64;
    // unit max-norm ball has volume 2^d
    let nats = digamma(n as f64) - digamma(k as f64) + d * std::f64::consts::LN_2
        + d * log_sum / (n - zero) as f64;
    Ok(EntropyEstimate { bits: nats / std::f64::consts::LN_2, samples: n, neighbors: k, zero_distances: zero })
}

/// One cross-sectional snapshot: states of every replication at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthFit {
    /// Bits per step.
    pub slope: f64,
    pub slope_std_error: f64,
    pub intercept: f64,
    pub points: Vec<(f64, f64)>,
}

/// Least-squares slope of entropy against time.
pub fn entropy_growth_rate(snapshots: &[Snapshot], dim: usize, k: usize) -> Result<GrowthFit, EstimatorError> {
    if snapshots.len() < 3 {
        return Err(EstimatorError::Input("need at least three snapshot times".into()));
    }
    let points = snapshots
        .iter()
        .map(|s| Ok((s.time, entropy_estimate(&s.samples, dim, k)?.bits)))
        .collect::<Result<Vec<_>, EstimatorError>>()?;
    let (t, h): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let LineFit { slope, intercept, slope_std_error } =
        least_squares(&t, &h).ok_or_else(|| EstimatorError::Input("snapshot times must differ".into()))?;
    Ok(GrowthFit { slope, slope_std_error, intercept, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, dim: usize, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); sigma * z }).collect::<Vec<f64>>()
    }

    fn brute_knn(samples: &[f64], dim: usize, k: usize) -> Vec<f64> {
        let n = samples.len() / dim;
        (0..n)
            .map(|i| {
                let mut d: Vec<f64> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (0..dim).fold(0.0f64, |m, c| m.max((samples[i * dim + c] - samples[j * dim + c]).abs())))
                    .collect();
                d.sort_by(f64::total_cmp);
                d[k - 1]
            })
            .collect()
    }

    #[test]
    fn knn_matches_brute_force() {
        for dim in 1..=3 {
            let s = gaussian(400, dim, 1.0, dim as u64);
            assert_eq!(knn_distances(&s, dim, 4), brute_knn(&s, dim, 4));
        }
    }

    #[test]
    fn gaussian_and_scaling_examples() {
        let unit = entropy_estimate(&gaussian(100_000, 1, 1.0, 1), 1, 4).unwrap();
        let closed = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).log2();
        assert!((unit.bits - closed).abs() < 0.05, "{} vs {closed}", unit.bits);
        let wide = entropy_estimate(&gaussian(100_000, 1, 2.0, 2), 1, 4).unwrap();
        assert!((wide.bits - unit.bits - 1.0).abs() < 0.07);
    }

    #[test]
    fn uniform_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let e = entropy_estimate(&s, 1, 4).unwrap();
        assert!(e.bits.abs() < 0.05, "{}", e.bits);
    }

    #[test]
    fn translation_invariance() {
        // dyadic samples and an integer shift keep every difference exact
        let s: Vec<f64> = gaussian(5_000, 2, 1.0, 4).iter().map(|v| (v * 1024.0).round() / 1024.0).collect();
        let shifted: Vec<f64> = s.iter().map(|v| v + 37.0).collect();
        let a = entropy_estimate(&s, 2, 4).unwrap();
        let b = entropy_estimate(&shifted, 2, 4).unwrap();
        assert_eq!(a.bits, b.bits);
        let raw = gaussian(5_000, 2, 1.0, 5);
        let moved: Vec<f64> = raw.iter().map(|v| v + 3.3).collect();
        let (a, b) = (entropy_estimate(&raw, 2, 4).unwrap(), entropy_estimate(&moved, 2, 4).unwrap());
        assert!((a.bits - b.bits).abs() < 1e-9);
    }

    #[test]
    fn duplicates_are_flagged() {
        let mut s: Vec<f64> = gaussian(200, 1, 1.0, 6);
        s.extend(std::iter::repeat_n(0.25, 50));
        let e = entropy_estimate(&s, 1, 4).unwrap();
        assert!(e.degenerate());
        assert!(matches!(
            entropy_estimate(&vec![1.0; 200], 1, 4),
            Err(EstimatorError::Degenerate(_))
        ));
    }

    #[test]
    fn input_checks() {
        assert!(entropy_estimate(&[0.0; 50], 1, 4).is_err());
        assert!(entropy_estimate(&gaussian(200, 1, 1.0, 1), 1, 0).is_err());
        assert!(entropy_growth_rate(&[], 1, 4).is_err());
    }

    #[test]
    fn static_source_has_flat_growth() {
        let snaps: Vec<Snapshot> = (0..5)
            .map(|i| Snapshot { time: i as f64 * 10.0, samples: gaussian(5_000, 1, 1.0, 100 + i) })
            .collect();
        let fit = entropy_growth_rate(&snaps, 1, 4).unwrap();
        assert!(fit.slope.abs() < 0.005, "{}", fit.slope);
    }
}
