//! One-parameter sweeps over a config template.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{ChannelSpec, CoderSpec, ExperimentConfig, ModelSpec};
use super::run::{run_experiment, RunOutcome};
use super::HarnessError;
use crate::estimators::write_csv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Noiseless channel rate in bits; the zoom coder takes the largest `K`
    /// with `K^N + 1 <= 2^R`.
    Rate,
    /// Erasure probability.
    Epsilon,
    /// Plant gain (benchmark gain, every diagonal entry, or slope).
    Gain,
    /// Quantizer levels `K`.
    Levels,
}

impl FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rate" => Ok(SweepAxis::Rate),
            "epsilon" | "eps" => Ok(SweepAxis::Epsilon),
            "gain" | "a" => Ok(SweepAxis::Gain),
            "K" | "k" | "levels" => Ok(SweepAxis::Levels),
            other => Err(HarnessError::Config(format!("unknown sweep axis '{other}' (rate, epsilon, gain, K)"))),
        }
    }
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Rate => "rate",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::Gain => "gain",
            SweepAxis::Levels => "K",
        }
    }

    /// Copy of `template` with this axis set to `value`.
    pub fn apply(&self, template: &ExperimentConfig, value: f64) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = template.clone();
        let bad = |m: String| Err(HarnessError::Config(m));
        match self {
            SweepAxis::Rate => {
                if !(value >= 1.0) || value > 62.0 {
                    return bad(format!("rate {value} must lie in [1, 62] bits"));
                }
                let symbols = value.exp2().floor() as usize;
                let dim = match &cfg.model {
                    ModelSpec::Linear { diag, .. } => diag.len(),
                    ModelSpec::Benchmark { dim, .. } => *dim,
                    ModelSpec::Expanding { .. } => 1,
                };
                if let CoderSpec::Zoom { levels, .. } = &mut cfg.coder {
                    let fits = |k: u32| (k as usize).checked_pow(dim as u32).is_some_and(|m| m < symbols);
                    let best = (2..=u16::MAX as u32).take_while(|k| fits(*k)).last();
                    *levels = best.ok_or_else(|| {
                        HarnessError::Config(format!("{value} bits cannot carry even K = 2 in {dim} dimensions"))
                    })?;
                }
                cfg.channel = Some(ChannelSpec::Noiseless { symbols: Some(symbols) });
            }
            SweepAxis::Epsilon => match &mut cfg.channel {
                Some(ChannelSpec::Erasure { epsilon, .. }) => *epsilon = value,
                _ => cfg.channel = Some(ChannelSpec::Erasure { symbols: None, epsilon: value }),
            },
            SweepAxis::Gain => match &mut cfg.model {
                ModelSpec::Linear { diag, .. } => diag.iter_mut().for_each(|a| *a = value),
                ModelSpec::Benchmark { gain, .. } => *gain = value,
                ModelSpec::Expanding { slope, .. } => *slope = value,
            },
            SweepAxis::Levels => {
                if value.fract() != 0.0 || !(value >= 2.0) || value > u32::MAX as f64 {
                    return bad(format!("K = {value} is not an integer >= 2"));
                }
                match &mut cfg.coder {
                    CoderSpec::Zoom { levels, .. } | CoderSpec::Fixed { levels, .. } => *levels = value as u32,
                    _ => return bad("the K axis needs a zoom or fixed coder".into()),
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub capacity: f64,
    pub v_hat: f64,
    pub v_hat_std_error: f64,
    pub l_inf: f64,
    pub m_sup: f64,
    pub codec_rate_bits: Option<f64>,
    pub codec_rate_condition: Option<bool>,
    pub ams_necessary: bool,
    pub phr_necessary: bool,
    pub diverged: usize,
    pub box_mass_second_half: f64,
    pub drift_b0: Option<f64>,
    pub stable: bool,
    pub config_hash: String,
}

impl SweepRow {
    fn from_outcome(value: f64, o: &RunOutcome) -> Self {
        Self {
            value,
            capacity: o.bounds.channel_capacity,
            v_hat: o.bounds.v_hat,
            v_hat_std_error: o.bounds.v_hat_std_error,
            l_inf: o.bounds.l_inf,
            m_sup: o.bounds.m_sup,
            codec_rate_bits: o.bounds.codec_rate_bits,
            codec_rate_condition: o.bounds.codec_rate_condition,
            ams_necessary: o.bounds.verdicts.ams_necessary,
            phr_necessary: o.bounds.verdicts.phr_necessary,
            diverged: o.summary.diverged,
            box_mass_second_half: o.summary.box_mass_second_half,
            drift_b0: o.summary.drift_b0,
            stable: o.summary.stable,
            config_hash: o.summary.config_hash.clone(),
        }
    }
}

/// One full experiment per value; with `out`, each run goes to
/// `out/<axis>_<index>/` and the merged table to `out/sweep.csv`.
pub fn run_sweep(
    template: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    out: Option<&Path>,
) -> Result<(Vec<SweepRow>, Vec<RunOutcome>), HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    let mut outcomes = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        let cfg = axis.apply(template, *v)?;
        let dir = out.map(|d| d.join(format!("{}_{i:03}", axis.name())));
        let outcome = run_experiment(&cfg, dir.as_deref())?;
        rows.push(SweepRow::from_outcome(*v, &outcome));
        outcomes.push(outcome);
    }
    if let Some(d) = out {
        std::fs::create_dir_all(d).map_err(|source| HarnessError::Io { path: d.display().to_string(), source })?;
        write_csv(&d.join("sweep.csv"), &rows)?;
    }
    Ok((rows, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            "horizon = 200\nreplications = 4\nseed = 3\nx0_std = 2.0\n\
             [model]\nkind = \"benchmark\"\ngain = 1.0\ndim = 2\nnoise_std = 0.1\n\
             [channel]\nkind = \"erasure\"\nepsilon = 0.0\n\
             [coder]\nkind = \"zoom\"\nK = 4\ns = 1.0\nL = 0.5\n",
        )
        .unwrap()
    }

    #[test]
    fn epsilon_sweep_capacity_column() {
        let values = [0.0, 0.1, 0.3];
        let (rows, _) = run_sweep(&template(), SweepAxis::Epsilon, &values, None).unwrap();
        let full = 17f64.log2();
        for (r, e) in rows.iter().zip(values) {
            assert!((r.capacity - (1.0 - e) * full).abs() < 1e-6, "{r:?}");
        }
        assert!(rows.windows(2).all(|w| w[1].capacity < w[0].capacity));
    }

    #[test]
    fn single_value_matches_direct_run() {
        let t = template();
        let (rows, outs) = run_sweep(&t, SweepAxis::Levels, &[4.0], None).unwrap();
        let direct = run_experiment(&t, None).unwrap();
        assert_eq!(outs[0].bounds, direct.bounds);
        assert_eq!(outs[0].summary, direct.summary);
        assert_eq!(rows[0].config_hash, t.hash());
    }

    #[test]
    fn axis_parsing_and_errors() {
        assert_eq!("K".parse::<SweepAxis>().unwrap(), SweepAxis::Levels);
        assert!("bogus".parse::<SweepAxis>().is_err());
        assert!(run_sweep(&template(), SweepAxis::Gain, &[], None).is_err());
        assert!(SweepAxis::Levels.apply(&template(), 2.5).is_err());
        let cfg = SweepAxis::Rate.apply(&template(), 6.1).unwrap();
        assert!(matches!(cfg.coder, CoderSpec::Zoom { levels: 8, .. }));
    }
}
