//! Closed-loop simulation of one replication:
//! encoder -> channel -> decoder/controller -> plant.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use super::config::{derive_seed, stream, ChannelSpec, CoderSpec, ExperimentConfig, ModelSpec};
use super::HarnessError;
use crate::channel::ChannelModel;
use crate::codec::{
    decoder_step, encoder_feedback, vector_quantize, CodecState, FiniteMemoryCoder, FixedQuantizerPolicy, Received,
    Side, SignZoomCoder, ZoomParams,
};
use crate::dynamics::{NoiseStream, SystemModel};
use crate::trajectory::{GridInfo, Link, Trajectory};

/// States beyond this magnitude are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e150;

#[derive(Debug, Clone)]
pub enum CoderPlan {
    Zoom(ZoomParams<f64>),
    SignZoom(ZoomParams<f64>),
    Fixed(FixedQuantizerPolicy<f64>),
    OpenLoop,
}

impl CoderPlan {
    /// Channel symbols the coder emits.
    pub fn symbols(&self) -> usize {
        match self {
            CoderPlan::Zoom(p) => p.symbols().expect("validated"),
            CoderPlan::SignZoom(_) => 2,
            CoderPlan::Fixed(p) => p.levels as usize + 1,
            CoderPlan::OpenLoop => 0,
        }
    }

    pub fn zoom_params(&self) -> Option<&ZoomParams<f64>> {
        match self {
            CoderPlan::Zoom(p) | CoderPlan::SignZoom(p) => Some(p),
            _ => None,
        }
    }
}

/// A validated, ready-to-run configuration.
#[derive(Debug, Clone)]
pub struct Plan {
    pub model: SystemModel<f64>,
    pub channel: Option<ChannelModel<f64>>,
    pub coder: CoderPlan,
    pub x0_std: f64,
    pub horizon: usize,
    pub seed: u64,
    pub hash: String,
}

pub fn build_model(spec: &ModelSpec) -> Result<SystemModel<f64>, HarnessError> {
    Ok(match spec {
        ModelSpec::Linear { diag, noise_std } => SystemModel::linear(diag.clone(), *noise_std)?,
        ModelSpec::Benchmark { gain, dim, noise_std } => SystemModel::benchmark(*gain, *dim, *noise_std)?,
        ModelSpec::Expanding { slope, noise_std } => SystemModel::expanding(*slope, *noise_std)?,
    })
}

pub fn build_channel(spec: &ChannelSpec, coder_symbols: usize) -> Result<ChannelModel<f64>, HarnessError> {
    Ok(match spec {
        ChannelSpec::Noiseless { symbols } => ChannelModel::noiseless(symbols.unwrap_or(coder_symbols))?,
        ChannelSpec::Erasure { symbols, epsilon } => ChannelModel::erasure(symbols.unwrap_or(coder_symbols), *epsilon)?,
        ChannelSpec::Bsc { p } => ChannelModel::bsc(*p)?,
        ChannelSpec::General { kernel } => {
            let outputs = kernel.first().map_or(0, Vec::len);
            if kernel.iter().any(|r| r.len() != outputs) {
                return Err(HarnessError::Config("kernel rows differ in length".into()));
            }
            ChannelModel::general(kernel.len(), outputs, kernel.concat())?
        }
    })
}

/// Bin size keeping all `dim` coordinates of a `N(0, sigma^2)` initial state
/// in range with probability 0.99, never below the floor.
pub fn default_delta0(levels: u32, dim: usize, x0_std: f64, floor: f64) -> f64 {
    let per_coordinate = 0.99f64.powf(1.0 / dim as f64);
    let z = StdNormal::new(0.0, 1.0).expect("unit normal").inverse_cdf(0.5 * (1.0 + per_coordinate));
    (2.0 * z * x0_std / levels as f64).max(floor)
}

impl Plan {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let model = build_model(&cfg.model)?;
        let contraction = model.certificate.as_ref().map(|c| c.constant);
        let zoom = |levels: u32, grid_step: f64, zoomout_exp: u32, alpha_exp: u32, floor: f64, delta0: Option<f64>| {
            let contraction = contraction.ok_or_else(|| HarnessError::Config("model has no control map".into()))?;
            let p = ZoomParams {
                levels,
                dim: model.dim,
                contraction,
                grid_step,
                zoomout_exp,
                alpha_exp,
                floor,
                delta0: delta0.unwrap_or_else(|| default_delta0(levels, model.dim, cfg.x0_std, floor)),
            };
            p.validate()?;
            Ok::<_, HarnessError>(p)
        };
        let coder = match &cfg.coder {
            CoderSpec::Zoom { levels, grid_step, zoomout_exp, alpha_exp, floor, delta0 } => {
                CoderPlan::Zoom(zoom(*levels, *grid_step, *zoomout_exp, *alpha_exp, *floor, *delta0)?)
            }
            CoderSpec::SignZoom { grid_step, zoomout_exp, alpha_exp, floor, delta0 } => {
                let p = zoom(2, *grid_step, *zoomout_exp, *alpha_exp, *floor, *delta0)?;
                SignZoomCoder::new(p.clone())?;
                CoderPlan::SignZoom(p)
            }
            CoderSpec::Fixed { levels, bin } => CoderPlan::Fixed(FixedQuantizerPolicy::for_model(&model, *levels, *bin)?),
            CoderSpec::OpenLoop => CoderPlan::OpenLoop,
        };
        let channel = match (&cfg.channel, &coder) {
            (Some(spec), CoderPlan::OpenLoop) => Some(build_channel(spec, 2)?),
            (Some(spec), c) => Some(build_channel(spec, c.symbols())?),
            (None, CoderPlan::OpenLoop) => None,
            (None, c) => Some(ChannelModel::noiseless(c.symbols())?),
        };
        if let (Some(ch), false) = (&channel, matches!(coder, CoderPlan::OpenLoop)) {
            if ch.inputs() < coder.symbols() {
                return Err(HarnessError::Config(format!(
                    "coder needs {} channel symbols ({:.3} bits) but the channel accepts {}",
                    coder.symbols(),
                    (coder.symbols() as f64).log2(),
                    ch.inputs()
                )));
            }
        }
        Ok(Self { model, channel, coder, x0_std: cfg.x0_std, horizon: cfg.horizon, seed: cfg.seed, hash: cfg.hash() })
    }

    pub fn replication_seed(&self, rep: usize) -> u64 {
        derive_seed(self.seed, &[rep as u64])
    }

    fn initial_state(&self, rep_seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, &[stream::INITIAL_STATE]));
        if self.x0_std == 0.0 {
            return vec![0.0; self.model.dim];
        }
        let law = Normal::new(0.0, self.x0_std).expect("validated std");
        (0..self.model.dim).map(|_| law.sample(&mut rng)).collect()
    }

    fn received(&self, symbol: usize, channel_rng: &mut ChaCha8Rng) -> Result<(u32, Received), HarnessError> {
        let ch = self.channel.as_ref().expect("closed loop has a channel");
        let out = ch.transmit(symbol, channel_rng)?;
        let rx = if Some(out) == ch.erasure_symbol() || out >= self.coder.symbols() {
            Received::Erased
        } else {
            Received::Symbol(out)
        };
        Ok((out as u32, rx))
    }

    /// Run replication `rep` to the horizon.
    pub fn simulate(&self, rep: usize) -> Result<Trajectory, HarnessError> {
        let n = self.model.dim;
        let t_max = self.horizon;
        let rep_seed = self.replication_seed(rep);
        let mut traj = Trajectory::new(n, rep_seed, self.hash.clone());
        traj.states.reserve((t_max + 1) * n);
        traj.controls.reserve(t_max * n);
        traj.links.reserve(t_max);
        let mut noise = NoiseStream::new(derive_seed(rep_seed, &[stream::PLANT_NOISE]), &self.model.noise);
        let mut channel_rng = ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, &[stream::CHANNEL]));
        let mut x = self.initial_state(rep_seed);
        let mut next = vec![0.0; n];
        let mut w = vec![0.0; n];
        let zero = vec![0.0; n];
        traj.states.extend_from_slice(&x);

        let mut enc = CodecState::new(Side::Encoder);
        let mut dec = CodecState::new(Side::Decoder);
        let mut sign = match &self.coder {
            CoderPlan::SignZoom(p) => Some(SignZoomCoder::new(p.clone())?),
            _ => None,
        };
        let mut fixed = match &self.coder {
            CoderPlan::Fixed(p) => Some(FiniteMemoryCoder::new(p.clone())),
            _ => None,
        };
        if let CoderPlan::Zoom(p) = &self.coder {
            traj.grid_info = Some(GridInfo { delta0: p.delta0, grid_step: p.grid_step, levels: p.levels });
            traj.grid.reserve(t_max);
            traj.in_range.reserve(t_max);
        }

        for t in 0..t_max {
            let (u, link) = match &self.coder {
                CoderPlan::OpenLoop => (zero.clone(), Link::Open),
                CoderPlan::Zoom(p) => {
                    let q = vector_quantize(&x, p, &enc)?;
                    traj.grid.push(dec.grid);
                    traj.in_range.push(q.in_range());
                    let (out, rx) = self.received(q.symbol, &mut channel_rng)?;
                    let (u, _, next_dec) = decoder_step(rx, &dec, p, &self.model)?;
                    enc = encoder_feedback(rx, &enc, p);
                    dec = next_dec;
                    debug_assert!(enc.synchronized_with(&dec));
                    (u, link(q.symbol as u32, out, rx))
                }
                CoderPlan::SignZoom(_) => {
                    let coder = sign.as_mut().expect("sign coder");
                    let symbol = coder.encode(x[0]);
                    let (out, rx) = self.received(symbol, &mut channel_rng)?;
                    let (u, _) = coder.receive(rx, &self.model)?;
                    (u, link(symbol as u32, out, rx))
                }
                CoderPlan::Fixed(_) => {
                    let coder = fixed.as_mut().expect("fixed coder");
                    let symbol = crate::codec::FiniteMemoryPolicy::encode(&coder.policy, x[0], coder.memory);
                    let (out, rx) = self.received(symbol, &mut channel_rng)?;
                    let r = match rx {
                        Received::Symbol(s) => s,
                        Received::Erased => coder.policy.levels as usize,
                    };
                    let (u, _) = coder.step_received(r);
                    (vec![u], link(symbol as u32, out, rx))
                }
            };
            noise.next_into(&mut w);
            self.model.step_into(&x, &u, &w, &mut next)?;
            traj.controls.extend_from_slice(&u);
            traj.links.push(link);
            if next.iter().any(|v| !(v.abs() <= DIVERGENCE_LIMIT)) {
                traj.diverged_at = Some(t + 1);
                fill_diverged(&mut traj, t + 1, t_max);
                break;
            }
            std::mem::swap(&mut x, &mut next);
            traj.states.extend_from_slice(&x);
        }
        Ok(traj)
    }
}

fn link(sent: u32, out: u32, rx: Received) -> Link {
    match rx {
        Received::Symbol(_) => Link::Delivered { sent, received: out },
        Received::Erased => Link::Erased { sent },
    }
}

/// Absorbing fill after divergence: states `+inf`, zero control, overflow.
fn fill_diverged(traj: &mut Trajectory, from: usize, t_max: usize) {
    let n = traj.dim;
    traj.states.extend(std::iter::repeat_n(f64::INFINITY, (t_max + 1 - from) * n));
    traj.controls.extend(std::iter::repeat_n(0.0, (t_max - from) * n));
    traj.links.extend(std::iter::repeat_n(Link::Open, t_max - from));
    if let Some(&g) = traj.grid.last() {
        traj.grid.extend(std::iter::repeat_n(g, t_max - traj.grid.len()));
        traj.in_range.extend(std::iter::repeat_n(false, t_max - traj.in_range.len()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            "horizon = 10\nreplications = 2\nseed = 5\nx0_std = 3.0\n{extra}"
        ))
        .unwrap()
    }

    const BENCH: &str = "[model]\nkind = \"benchmark\"\ngain = 1.2\ndim = 2\nnoise_std = 0.5\n";

    #[test]
    fn zoom_loop_stays_consistent() {
        let c = cfg(&format!("{BENCH}[coder]\nkind = \"zoom\"\nK = 8\n"));
        let plan = Plan::from_config(&c).unwrap();
        let t = plan.simulate(0).unwrap();
        assert!(t.is_consistent());
        assert_eq!(t.len(), 10);
        assert_eq!(t.config_hash, c.hash());
        assert_eq!(plan.simulate(0).unwrap(), t);
        assert_ne!(plan.simulate(1).unwrap().states, t.states);
    }

    #[test]
    fn alphabet_mismatch_is_a_config_error() {
        let c = cfg(&format!("{BENCH}[channel]\nkind = \"noiseless\"\nsymbols = 16\n[coder]\nkind = \"zoom\"\nK = 8\n"));
        assert!(matches!(Plan::from_config(&c), Err(HarnessError::Config(_))));
    }

    #[test]
    fn open_loop_doubles() {
        let c = cfg("[model]\nkind = \"linear\"\ndiag = [2.0]\nnoise_std = 0.0\n[coder]\nkind = \"open_loop\"\n");
        let t = Plan::from_config(&c).unwrap().simulate(0).unwrap();
        let x0 = t.state(0)[0];
        assert_eq!(t.state(10)[0], x0 * 1024.0);
    }

    #[test]
    fn divergence_is_absorbing() {
        let c = ExperimentConfig::from_toml(
            "horizon = 600\nreplications = 1\nseed = 1\n[model]\nkind = \"linear\"\ndiag = [4.0]\nnoise_std = 1.0\n[coder]\nkind = \"open_loop\"\n",
        )
        .unwrap();
        let t = Plan::from_config(&c).unwrap().simulate(0).unwrap();
        let at = t.diverged_at.unwrap();
        assert!(at < 300);
        assert!(t.is_consistent());
        assert!(t.state(600)[0].is_infinite());
    }

    #[test]
    fn default_delta0_covers_initial_spread() {
        let d = default_delta0(8, 1, 1.0, 1e-9);
        assert!((d * 4.0 - 2.5758).abs() < 1e-3);
        assert_eq!(default_delta0(8, 2, 0.0, 0.5), 0.5);
    }
}
