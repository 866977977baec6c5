//! Return-time probe for finite-memory coders on expanding scalar plants.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{wilson_interval, Z95};
use super::EstimatorError;
use crate::codec::{FiniteMemoryCoder, FiniteMemoryPolicy};
use crate::dynamics::{NoiseStream, SystemModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransienceConfig {
    pub starts: Vec<f64>,
    /// Target set `S = (-inf, set_upper)`.
    pub set_upper: f64,
    pub horizon: usize,
    pub replications: usize,
    /// A path beyond this radius counts as escaped.
    pub escape_radius: f64,
    /// Threshold `K` beyond which the plant is checked to expand.
    pub expansion_from: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnRow {
    pub start: f64,
    pub returned: u64,
    pub escaped: u64,
    pub undecided: u64,
    pub replications: u64,
    /// Fraction with `tau_S <= H`; lower bracket of `P(tau_S < inf)`.
    pub lower: f64,
    /// Returned plus undecided.
    pub upper: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransienceReport {
    pub rows: Vec<ReturnRow>,
    /// Sampled `inf_{x > K} f'(x) > 1`.
    pub expansion_holds: bool,
    pub decreasing: bool,
    pub control_bound: f64,
}

fn expansion_holds(model: &SystemModel<f64>, from: f64) -> Result<bool, EstimatorError> {
    let w = vec![0.0; model.dim];
    for i in 0..2_000 {
        let x = from + 1e-9 + (i as f64 / 100.0).exp2() - 1.0;
        let j = model.jacobian(&[x], &w).map_err(|e| EstimatorError::Input(e.to_string()))?;
        if !(j[0] > 1.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Outcome of one replication: `Some(true)` returned, `Some(false)` escaped.
fn run_one<P: FiniteMemoryPolicy<f64> + Clone>(
    model: &SystemModel<f64>,
    policy: &P,
    start: f64,
    cfg: &TransienceConfig,
    seed: u64,
) -> Result<Option<bool>, EstimatorError> {
    let mut coder = FiniteMemoryCoder::new(policy.clone());
    let mut noise = NoiseStream::new(seed, &model.noise);
    let mut w = [0.0];
    let mut x = [start];
    let mut next = [0.0];
    for _ in 0..cfg.horizon {
        let (u, _) = coder.step(x[0]);
        noise.next_into(&mut w);
        model.step_into(&x, &[u], &w, &mut next).map_err(|e| EstimatorError::Input(e.to_string()))?;
        x = next;
        if x[0] < cfg.set_upper {
            return Ok(Some(true));
        }
        if !(x[0].abs() <= cfg.escape_radius) {
            return Ok(Some(false));
        }
    }
    Ok(None)
}

/// Fraction of replications entering `S` within the horizon, per start.
pub fn transience_probe<P>(
    model: &SystemModel<f64>,
    policy: &P,
    cfg: &TransienceConfig,
) -> Result<TransienceReport, EstimatorError>
where
    P: FiniteMemoryPolicy<f64> + Clone + Sync,
{
    if model.dim != 1 {
        return Err(EstimatorError::Input("transience probe needs a scalar plant".into()));
    }
    if cfg.starts.is_empty() || cfg.replications == 0 || cfg.horizon == 0 {
        return Err(EstimatorError::Input("need start levels, replications and a horizon".into()));
    }
    let mut rows = Vec::with_capacity(cfg.starts.len());
    for (s, &start) in cfg.starts.iter().enumerate() {
        let outcomes = (0..cfg.replications)
            .into_par_iter()
            .map(|r| {
                let seed = crate::harness::derive_seed(cfg.seed, &[s as u64, r as u64]);
                run_one(model, policy, start, cfg, seed)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let returned = outcomes.iter().filter(|o| **o == Some(true)).count() as u64;
        let escaped = outcomes.iter().filter(|o| **o == Some(false)).count() as u64;
        let n = cfg.replications as u64;
        let undecided = n - returned - escaped;
        let (ci_low, ci_high) = wilson_interval(returned, n, Z95);
        rows.push(ReturnRow {
            start,
            returned,
            escaped,
            undecided,
            replications: n,
            lower: returned as f64 / n as f64,
            upper: (returned + undecided) as f64 / n as f64,
            ci_low,
            ci_high,
        });
    }
    let decreasing = rows.windows(2).all(|w| w[1].upper < w[0].lower);
    Ok(TransienceReport {
        rows,
        expansion_holds: expansion_holds(model, cfg.expansion_from)?,
        decreasing,
        control_bound: policy.control_bound(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::FixedQuantizerPolicy;

    fn config(u: f64) -> TransienceConfig {
        TransienceConfig {
            starts: vec![2.0 * u, 4.0 * u, 8.0 * u],
            set_upper: u,
            horizon: 1_000,
            replications: 2_000,
            escape_radius: 1e12,
            expansion_from: 0.0,
            seed: 11,
        }
    }

    #[test]
    fn expanding_plant_returns_less_from_farther() {
        let model = SystemModel::linear(vec![2.0], 24.0).unwrap();
        let policy = FixedQuantizerPolicy::for_model(&model, 4, 1.0).unwrap();
        let u = policy.control_bound();
        assert_eq!(u, 3.0);
        let rep = transience_probe(&model, &policy, &config(u)).unwrap();
        assert!(rep.expansion_holds);
        assert!(rep.decreasing, "{:?}", rep.rows);
        assert!(rep.rows.iter().all(|r| r.upper < 1.0 && r.undecided == 0));
    }

    #[test]
    fn contracting_plant_always_returns() {
        let model = SystemModel::linear(vec![0.5], 1.0).unwrap();
        let policy = FixedQuantizerPolicy::for_model(&model, 4, 1.0).unwrap();
        let rep = transience_probe(&model, &policy, &config(policy.control_bound())).unwrap();
        assert!(!rep.expansion_holds);
        assert!(rep.rows.iter().all(|r| r.lower == 1.0));
    }

    #[test]
    fn rejects_vector_plants() {
        let model = SystemModel::linear(vec![2.0, 2.0], 1.0).unwrap();
        let scalar = SystemModel::linear(vec![2.0], 1.0).unwrap();
        let policy = FixedQuantizerPolicy::for_model(&scalar, 4, 1.0).unwrap();
        assert!(transience_probe(&model, &policy, &config(3.0)).is_err());
    }
}
