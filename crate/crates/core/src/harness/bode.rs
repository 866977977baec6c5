//! Linear-Gaussian loop over an additive Gaussian channel, for the
//! log-sensitivity integral.
//!
//! `x+ = a x + u + w`, `q' = x + v`, `u = -k q'` with `k = a - 1/a`, which
//! puts the closed-loop pole at `1/a`. The map `v -> q'` is then
//! `(1 - a z^-1) / (1 - z^-1 / a)`, all-pass with gain `|a|`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::derive_seed;
use super::HarnessError;
use crate::estimators::{bode_integral, BodeEstimate, BodeOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodeExperiment {
    pub gain: f64,
    pub plant_noise_std: f64,
    pub channel_noise_std: f64,
    pub samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub options: BodeOptions,
}

impl Default for BodeExperiment {
    fn default() -> Self {
        Self {
            gain: 2.0,
            plant_noise_std: 1.0,
            channel_noise_std: 1.0,
            samples: 1 << 20,
            burn_in: 4096,
            seed: 0,
            options: BodeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodeRun {
    pub estimate: BodeEstimate,
    /// `sum log2|lambda|` over unstable eigenvalues.
    pub eigen_bound: f64,
    pub feedback_gain: f64,
}

/// The output record `q'` and noise record `v`, burn-in removed.
pub fn simulate_loop(exp: &BodeExperiment) -> Result<(Vec<f64>, Vec<f64>), HarnessError> {
    let a = exp.gain;
    if !(a.abs() > 1.0) || !a.is_finite() {
        return Err(HarnessError::Config("loop gain must satisfy |a| > 1".into()));
    }
    let law = |s: f64| Normal::new(0.0, s).map_err(|e| HarnessError::Config(e.to_string()));
    let (w_law, v_law) = (law(exp.plant_noise_std)?, law(exp.channel_noise_std)?);
    let mut w_rng = ChaCha8Rng::seed_from_u64(derive_seed(exp.seed, &[1]));
    let mut v_rng = ChaCha8Rng::seed_from_u64(derive_seed(exp.seed, &[2]));
    let k = a - 1.0 / a;
    let mut x = 0.0;
    let mut y = Vec::with_capacity(exp.samples);
    let mut v_rec = Vec::with_capacity(exp.samples);
    for t in 0..exp.burn_in + exp.samples {
        let v = v_law.sample(&mut v_rng);
        let q = x + v;
        if t >= exp.burn_in {
            y.push(q);
            v_rec.push(v);
        }
        x = a * x - k * q + w_law.sample(&mut w_rng);
    }
    Ok((y, v_rec))
}

pub fn run_bode(exp: &BodeExperiment) -> Result<BodeRun, HarnessError> {
    let (y, v) = simulate_loop(exp)?;
    let estimate = bode_integral(&y, &v, &exp.options)?;
    Ok(BodeRun { estimate, eigen_bound: exp.gain.abs().log2(), feedback_gain: exp.gain - 1.0 / exp.gain })
}
