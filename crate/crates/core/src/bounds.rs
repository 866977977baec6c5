//! Rate bounds: the log-Jacobian entropy rate along closed-loop
//! trajectories, its inf/sup, the linear eigenvalue bound and the contraction
//! sufficiency threshold, assembled into a [`BoundReport`].

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ModelError, NoiseStream, SystemModel};
use crate::scalar::{shifted_mean, Real};
use crate::trajectory::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("no trajectories (or no finite states) to average over")]
    Empty,
    #[error("bound not applicable: {0}")]
    NotApplicable(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `sum log2|lambda|` over eigenvalues outside the unit circle.
pub fn linear_rate_bound<T: Real>(eigenvalues: &[Complex<T>]) -> T {
    eigenvalues
        .iter()
        .map(|l| l.norm())
        .filter(|m| *m > T::one())
        .fold(T::zero(), |acc, m| acc + m.log2())
}

/// `N log2|a| + 1` for a plant with a contraction certificate.
pub fn sufficiency_threshold<T: Real>(model: &SystemModel<T>) -> Result<T, BoundsError> {
    let cert = model
        .certificate
        .as_ref()
        .ok_or_else(|| BoundsError::NotApplicable("model has no contraction certificate".into()))?;
    Ok(T::of(model.dim as f64) * cert.constant.abs().log2() + T::one())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateOptions {
    /// Fresh noise draws per visited state for the inner noise average.
    pub noise_draws: usize,
    /// Fraction of each trajectory discarded as burn-in.
    pub burn_in: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self { noise_draws: 16, burn_in: 0.5 }
    }
}

const BATCHES: usize = 10;

/// Tail average of `log2|J|` along one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRate {
    pub mean: f64,
    pub batch_means: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub samples: usize,
}

/// Empirical log-Jacobian rate. The average is under the empirical
/// occupation measure of the simulated trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianRate {
    pub mean: f64,
    pub std_error: f64,
    pub replications: usize,
    pub samples: usize,
    pub sampled_min: f64,
    pub sampled_max: f64,
}

pub fn replication_log_jacobian(
    model: &SystemModel<f64>,
    trajectory: &Trajectory,
    options: &RateOptions,
    seed: u64,
) -> Result<Option<ReplicationRate>, BoundsError> {
    let total = trajectory.len() + 1;
    let start = ((total as f64) * options.burn_in).floor() as usize;
    let mut noise = NoiseStream::new(seed, &model.noise);
    let mut w = vec![0.0; model.dim];
    let zero = vec![0.0; model.dim];
    let draws = if model.jacobian_depends_on_noise() { options.noise_draws.max(1) } else { 1 };
    let mut values = Vec::with_capacity(total - start);
    for t in start..total {
        let x = trajectory.state(t);
        if !x.iter().all(|v| v.is_finite()) {
            continue;
        }
        let value = if draws == 1 && !model.jacobian_depends_on_noise() {
            model.log_jacobian(x, &zero)?
        } else {
            let mut acc = Vec::with_capacity(draws);
            for _ in 0..draws {
                noise.next_into(&mut w);
                acc.push(model.log_jacobian(x, &w)?);
            }
            shifted_mean(acc).expect("draws >= 1")
        };
        values.push(value);
    }
    if values.is_empty() {
        return Ok(None);
    }
    let chunk = values.len().div_ceil(BATCHES);
    let batch_means = values.chunks(chunk).map(|c| shifted_mean(c.iter().copied()).unwrap()).collect();
    let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    Ok(Some(ReplicationRate {
        mean: shifted_mean(values.iter().copied()).unwrap(),
        batch_means,
        min,
        max,
        samples: values.len(),
    }))
}

/// Pool replication averages in index order. With two or more replications
/// the standard error comes from their spread; a single replication falls
/// back to batch means.
pub fn combine_replications(reps: &[ReplicationRate]) -> Result<JacobianRate, BoundsError> {
    if reps.is_empty() {
        return Err(BoundsError::Empty);
    }
    let means: Vec<f64> = reps.iter().map(|r| r.mean).collect();
    let mean = shifted_mean(means.iter().copied()).unwrap();
    let spread = if reps.len() >= 2 { &means } else { &reps[0].batch_means };
    let n = spread.len() as f64;
    let std_error = if spread.len() >= 2 {
        let var = spread.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(JacobianRate {
        mean,
        std_error,
        replications: reps.len(),
        samples: reps.iter().map(|r| r.samples).sum(),
        sampled_min: reps.iter().map(|r| r.min).fold(f64::INFINITY, f64::min),
        sampled_max: reps.iter().map(|r| r.max).fold(f64::NEG_INFINITY, f64::max),
    })
}

/// `V_hat`: time-and-replication average of `log2|J|` over the trajectory
/// tails, with fresh noise for the inner average.
pub fn jacobian_entropy_rate(
    model: &SystemModel<f64>,
    trajectories: &[Trajectory],
    options: &RateOptions,
    seed: u64,
) -> Result<JacobianRate, BoundsError> {
    let mut reps = Vec::with_capacity(trajectories.len());
    for (i, t) in trajectories.iter().enumerate() {
        let rep_seed = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        if let Some(r) = replication_log_jacobian(model, t, options, rep_seed)? {
            reps.push(r);
        }
    }
    combine_replications(&reps)
}

/// `(L_inf, M_sup)`: declared bounds when available, otherwise the sampled
/// extremes of `log2|J|`.
pub fn log_jacobian_range(model: &SystemModel<f64>, rate: &JacobianRate) -> (f64, f64) {
    (
        model.bounds.lower.unwrap_or(rate.sampled_min),
        model.bounds.upper.unwrap_or(rate.sampled_max),
    )
}

/// Random draws of `log2|J|` around the origin, for user models without
/// declared bounds when no trajectory is available.
pub fn sample_log_jacobian_range(model: &SystemModel<f64>, radius: f64, count: usize, seed: u64) -> Result<(f64, f64), BoundsError> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = NoiseStream::new(seed.wrapping_add(1), &model.noise);
    let mut w = vec![0.0; model.dim];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for _ in 0..count {
        let x: Vec<f64> = (0..model.dim).map(|_| rng.random_range(-radius..=radius)).collect();
        noise.next_into(&mut w);
        let v = model.log_jacobian(&x, &w)?;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if count == 0 {
        return Err(BoundsError::Empty);
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub capacity: f64,
    pub rate: JacobianRate,
    pub l_inf: f64,
    pub m_sup: f64,
    pub linear_bound: Option<f64>,
    pub sufficiency_threshold: Option<f64>,
    /// `(2^R' > |a| / alpha, log2(K^N + 1))` for zoom-coded runs.
    pub codec: Option<(bool, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    /// `C >= L_inf`, necessary for asymptotic mean stationarity.
    pub ams_necessary: bool,
    /// `C >= V_hat`, necessary for positive Harris recurrence.
    pub phr_necessary: bool,
    /// `C > N log2|a| + 1`, sufficient for the zoom construction.
    pub sufficiency: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Empirical: averaged under the simulated occupation measure.
    pub v_hat: f64,
    pub v_hat_std_error: f64,
    pub v_hat_replications: usize,
    pub l_inf: f64,
    pub m_sup: f64,
    pub linear_bound: Option<f64>,
    pub sufficiency_threshold: Option<f64>,
    pub channel_capacity: f64,
    pub codec_rate_bits: Option<f64>,
    pub codec_rate_condition: Option<bool>,
    pub verdicts: Verdicts,
}

pub fn verdicts(inputs: &BoundInputs) -> BoundReport {
    let c = inputs.capacity;
    BoundReport {
        v_hat: inputs.rate.mean,
        v_hat_std_error: inputs.rate.std_error,
        v_hat_replications: inputs.rate.replications,
        l_inf: inputs.l_inf,
        m_sup: inputs.m_sup,
        linear_bound: inputs.linear_bound,
        sufficiency_threshold: inputs.sufficiency_threshold,
        channel_capacity: c,
        codec_rate_bits: inputs.codec.map(|(_, bits)| bits),
        codec_rate_condition: inputs.codec.map(|(ok, _)| ok),
        verdicts: Verdicts {
            ams_necessary: c >= inputs.l_inf,
            phr_necessary: c >= inputs.rate.mean,
            sufficiency: inputs.sufficiency_threshold.map(|t| c > t),
        },
    }
}

impl BoundReport {
    /// `L_inf <= V_hat <= M_sup`, allowing `sigmas` standard errors.
    pub fn is_ordered(&self, sigmas: f64) -> bool {
        let slack = sigmas * self.v_hat_std_error;
        self.l_inf <= self.v_hat + slack && self.v_hat <= self.m_sup + slack
    }

    pub fn render_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        let yes = |b: bool| if b { "satisfied" } else { "violated" };
        let mut out = String::new();
        out.push_str(&format!("{:<34} {:>14}\n", "quantity", "bits"));
        out.push_str(&format!("{:<34} {:>14.6}\n", "channel capacity C", self.channel_capacity));
        out.push_str(&format!(
            "{:<34} {:>14.6} (se {:.2e}, {} reps, empirical)\n",
            "V_hat (log-Jacobian rate)", self.v_hat, self.v_hat_std_error, self.v_hat_replications
        ));
        out.push_str(&format!("{:<34} {:>14.6}\n", "L_inf", self.l_inf));
        out.push_str(&format!("{:<34} {:>14.6}\n", "M_sup", self.m_sup));
        out.push_str(&format!("{:<34} {:>14}\n", "sum log2|lambda| (unstable)", opt(self.linear_bound)));
        out.push_str(&format!("{:<34} {:>14}\n", "N log2|a| + 1", opt(self.sufficiency_threshold)));
        out.push_str(&format!("{:<34} {:>14}\n", "codec rate log2(K^N+1)", opt(self.codec_rate_bits)));
        if let Some(ok) = self.codec_rate_condition {
            out.push_str(&format!("2^R' > |a|/alpha: {}\n", if ok { "holds" } else { "fails" }));
        }
        out.push_str(&format!("C >= L_inf: {}\n", yes(self.verdicts.ams_necessary)));
        out.push_str(&format!("C >= V_hat: {}\n", yes(self.verdicts.phr_necessary)));
        if let Some(s) = self.verdicts.sufficiency {
            out.push_str(&format!("C > N log2|a| + 1: {}\n", yes(s)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Link;

    fn trajectory_from(states: &[f64]) -> Trajectory {
        let mut t = Trajectory::new(1, 0, "test");
        t.states = states.to_vec();
        t.controls = vec![0.0; states.len() - 1];
        t.links = vec![Link::Open; states.len() - 1];
        t
    }

    #[test]
    fn linear_bound_examples() {
        let c = |v: f64| Complex::new(v, 0.0);
        assert!((linear_rate_bound(&[c(2.0), c(0.5), c(-3.0)]) - 6f64.log2()).abs() < 1e-12);
        assert_eq!(linear_rate_bound(&[c(0.9), c(-0.3)]), 0.0);
        assert_eq!(linear_rate_bound(&[c(2.0), c(2.0)]), 2.0);
        // complex pair of modulus 2
        assert!((linear_rate_bound(&[Complex::new(0.0f64, 2.0), Complex::new(0.0, -2.0)]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sufficiency_examples() {
        let m = SystemModel::<f64>::benchmark(1.0, 2, 1.0).unwrap();
        assert!((sufficiency_threshold(&m).unwrap() - (2.0 * 1.5f64.log2() + 1.0)).abs() < 1e-12);
        let m = SystemModel::linear(vec![1.0], 1.0).unwrap();
        assert_eq!(sufficiency_threshold(&m).unwrap(), 1.0);
        let m = SystemModel::linear(vec![2.0, -2.0], 1.0).unwrap();
        assert_eq!(sufficiency_threshold(&m).unwrap(), 3.0);
        let t: crate::dynamics::TransitionFn<f64> = std::sync::Arc::new(|x, u, w| vec![x[0] + u[0] + w[0]]);
        let m = SystemModel::custom("id", 1, crate::dynamics::ModelForm::AdditiveNoise, t, vec![1.0]).unwrap();
        assert!(matches!(sufficiency_threshold(&m), Err(BoundsError::NotApplicable(_))));
    }

    #[test]
    fn constant_jacobian_rate_is_exact() {
        let m = SystemModel::linear(vec![2.0, 3.0], 1.0).unwrap();
        let mut t = Trajectory::new(2, 0, "test");
        t.states = (0..202).map(|i| i as f64).collect();
        t.controls = vec![0.0; 200];
        t.links = vec![Link::Open; 100];
        let rate = jacobian_entropy_rate(&m, &[t.clone(), t], &RateOptions::default(), 1).unwrap();
        assert_eq!(rate.mean, 6f64.log2());
        assert_eq!(rate.std_error, 0.0);
        let id = SystemModel::linear(vec![1.0], 1.0).unwrap();
        let rate = jacobian_entropy_rate(&id, &[trajectory_from(&[1.0, 2.0, 3.0])], &RateOptions::default(), 1).unwrap();
        assert_eq!(rate.mean, 0.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        let m = SystemModel::linear(vec![2.0], 1.0).unwrap();
        assert_eq!(jacobian_entropy_rate(&m, &[], &RateOptions::default(), 1), Err(BoundsError::Empty));
    }

    fn rate(mean: f64) -> JacobianRate {
        JacobianRate { mean, std_error: 0.0, replications: 1, samples: 1, sampled_min: mean, sampled_max: mean }
    }

    #[test]
    fn verdict_examples() {
        let m = SystemModel::linear(vec![2.0], 1.0).unwrap();
        let threshold = sufficiency_threshold(&m).unwrap();
        assert_eq!(threshold, 2.0);
        let inputs = |c: f64| BoundInputs {
            capacity: c,
            rate: rate(1.0),
            l_inf: 1.0,
            m_sup: 1.0,
            linear_bound: Some(1.0),
            sufficiency_threshold: Some(threshold),
            codec: None,
        };
        let r = verdicts(&inputs(1.0));
        assert!(r.verdicts.ams_necessary);
        assert_eq!(r.verdicts.sufficiency, Some(false));
        let r = verdicts(&inputs(3.0));
        assert!(r.verdicts.ams_necessary && r.verdicts.phr_necessary);
        assert_eq!(r.verdicts.sufficiency, Some(true));
        assert!(r.render_table().contains("C >= V_hat: satisfied"));

        let contracting = SystemModel::linear(vec![0.5], 1.0).unwrap();
        let t = sufficiency_threshold(&contracting).unwrap();
        assert!(t <= 1.0);
        assert_eq!(verdicts(&BoundInputs { sufficiency_threshold: Some(t), ..inputs(1.0) }).verdicts.sufficiency, Some(true));
    }
}
