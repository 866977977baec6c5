//! Experiment configuration, canonical form, hashing and seed derivation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::bounds::RateOptions;
use crate::estimators::Threshold;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Linear { diag: Vec<f64>, noise_std: f64 },
    Benchmark { gain: f64, dim: usize, noise_std: f64 },
    Expanding { slope: f64, noise_std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    /// `symbols` defaults to the coder alphabet.
    Noiseless {
        #[serde(default)]
        symbols: Option<usize>,
    },
    Erasure {
        #[serde(default)]
        symbols: Option<usize>,
        epsilon: f64,
    },
    Bsc { p: f64 },
    /// Row-stochastic kernel, one row per input symbol.
    General { kernel: Vec<Vec<f64>> },
}

fn one() -> f64 {
    1.0
}

fn one_u32() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoderSpec {
    Zoom {
        #[serde(alias = "K")]
        levels: u32,
        #[serde(default = "one", alias = "s")]
        grid_step: f64,
        #[serde(default = "one_u32")]
        zoomout_exp: u32,
        #[serde(default = "one_u32")]
        alpha_exp: u32,
        #[serde(default = "one", alias = "L")]
        floor: f64,
        /// Defaults to a bin size that keeps 99% of initial states in range.
        #[serde(default)]
        delta0: Option<f64>,
    },
    SignZoom {
        #[serde(default = "one", alias = "s")]
        grid_step: f64,
        #[serde(default = "one_u32")]
        zoomout_exp: u32,
        #[serde(default = "one_u32")]
        alpha_exp: u32,
        #[serde(default = "one", alias = "L")]
        floor: f64,
        #[serde(default)]
        delta0: Option<f64>,
    },
    Fixed {
        #[serde(alias = "K")]
        levels: u32,
        bin: f64,
    },
    OpenLoop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    #[serde(default)]
    pub threshold: Threshold,
    /// Horizons for the escape table; default is log-spaced up to `T`.
    #[serde(default)]
    pub escape_times: Vec<usize>,
    /// Bounded box `[-r, r]^N` used for the stability verdict and the
    /// Cesàro check. Default `1000 Delta_0` for zoom coders, else `1000`.
    #[serde(default)]
    pub box_radius: Option<f64>,
    #[serde(default)]
    pub cesaro_checkpoints: Vec<usize>,
    /// Half-widths of the Cesàro event boxes; default `r * {1e-3, 1e-2, 1e-1, 1}`
    /// with `r` the box radius.
    #[serde(default)]
    pub cesaro_radii: Vec<f64>,
    /// Drift threshold `F`; defaults to the floor `L`.
    #[serde(default)]
    pub drift_threshold: Option<f64>,
    /// Bin-size edges for the tail table.
    #[serde(default)]
    pub tail_edges: Vec<f64>,
    #[serde(default = "default_draws")]
    pub noise_draws: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    /// Window at the end of each run for the `|x|_inf` percentile.
    #[serde(default = "default_window")]
    pub tail_window: usize,
}

fn default_draws() -> usize {
    RateOptions::default().noise_draws
}

fn default_burn_in() -> f64 {
    RateOptions::default().burn_in
}

fn default_window() -> usize {
    10_000
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        Self {
            threshold: Threshold::Linear,
            escape_times: Vec::new(),
            box_radius: None,
            cesaro_checkpoints: Vec::new(),
            cesaro_radii: Vec::new(),
            drift_threshold: None,
            tail_edges: Vec::new(),
            noise_draws: default_draws(),
            burn_in: default_burn_in(),
            tail_window: default_window(),
        }
    }
}

fn default_name() -> String {
    "run".into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    /// Worker threads; not part of the canonical form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Not part of the canonical form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Standard deviation of the Gaussian initial state.
    #[serde(default = "one")]
    pub x0_std: f64,
    #[serde(default)]
    pub snapshot_times: Vec<usize>,
    #[serde(default = "default_true")]
    pub store_trajectories: bool,
    pub model: ModelSpec,
    #[serde(default)]
    pub channel: Option<ChannelSpec>,
    pub coder: CoderSpec,
    #[serde(default)]
    pub estimators: EstimatorSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1");
        }
        if !(self.x0_std >= 0.0) || !self.x0_std.is_finite() {
            return bad("x0_std must be finite and nonnegative");
        }
        if self.snapshot_times.iter().any(|t| *t > self.horizon) {
            return bad("snapshot times must not exceed the horizon");
        }
        if !(0.0..1.0).contains(&self.estimators.burn_in) {
            return bad("burn_in must lie in [0, 1)");
        }
        Ok(())
    }

    /// Sorted-key JSON of every field that affects results.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.workers = None;
        c.output_dir = None;
        // serde_json's default map is ordered by key
        let value = serde_json::to_value(&c).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn rate_options(&self) -> RateOptions {
        RateOptions { noise_draws: self.estimators.noise_draws, burn_in: self.estimators.burn_in }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed from a base seed and a path of indices, by chained SplitMix64:
/// `h_0 = mix(base)`, `h_{j+1} = mix(h_j ^ mix(path_j))`.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(base), |h, p| splitmix64(h ^ splitmix64(*p)))
}

/// Stream labels under a replication seed.
pub mod stream {
    pub const PLANT_NOISE: u64 = 1;
    pub const CHANNEL: u64 = 2;
    pub const INITIAL_STATE: u64 = 3;
    pub const RATE_NOISE: u64 = 4;
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: &str = r#"
horizon = 100
replications = 4
seed = 7
[model]
kind = "benchmark"
gain = 1.2
dim = 2
noise_std = 0.5
[coder]
kind = "zoom"
K = 8
"#;

    const B: &str = r#"
seed = 7
replications = 4
horizon = 100
workers = 3
[coder]
K = 8
kind = "zoom"
[model]
noise_std = 0.5
dim = 2
kind = "benchmark"
gain = 1.2
"#;

    #[test]
    fn reordered_fields_hash_identically() {
        let a = ExperimentConfig::from_toml(A).unwrap();
        let b = ExperimentConfig::from_toml(B).unwrap();
        assert_eq!(a.canonical_json(), b.canonical_json());
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let mut c = a.clone();
        c.seed = 8;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn canonical_keys_are_sorted() {
        let json = ExperimentConfig::from_toml(A).unwrap().canonical_json();
        let i = json.find("\"coder\"").unwrap();
        let j = json.find("\"model\"").unwrap();
        assert!(i < j);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml(&A.replace("horizon = 100", "horizon = 0")).is_err());
        assert!(ExperimentConfig::from_toml(&A.replace("seed = 7", "seed = 7\nbogus = 1")).is_err());
        assert!(ExperimentConfig::from_toml("horizon = 3").is_err());
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..1000).map(|i| derive_seed(42, &[i])).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 1000);
        assert_eq!(derive_seed(42, &[3, 1]), derive_seed(42, &[3, 1]));
        assert_ne!(derive_seed(42, &[3, 1]), derive_seed(42, &[1, 3]));
    }
}
