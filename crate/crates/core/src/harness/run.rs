//! Replicated runs: parallel simulation, streaming estimators, persistence.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, stream, ExperimentConfig};
use super::sim::{CoderPlan, Plan};
use super::HarnessError;
use crate::bounds::{
    combine_replications, linear_rate_bound, log_jacobian_range, replication_log_jacobian, sufficiency_threshold,
    verdicts, BoundInputs, BoundReport, RateOptions, ReplicationRate,
};
use crate::channel::CAPACITY_TOLERANCE;
use crate::estimators::{
    entropy_growth_rate, stopping_times, write_csv, write_json, CesaroAccumulator, CesaroRow, DriftAccumulator,
    DriftReport, EscapeAccumulator, EscapeRow, EventBox, GrowthFit, Snapshot, TailAccumulator, TailReport,
    DEFAULT_NEIGHBORS,
};
use crate::trajectory::{Link, Trajectory};

pub const VERSION: &str = concat!("zoomlab ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub seeds: Vec<u64>,
    /// Paths relative to the output directory, sorted.
    pub files: Vec<String>,
}

/// Simulate every replication on at most `workers` threads and map each
/// trajectory through `f`; results come back in replication order.
pub fn run_map<S, F>(plan: &Plan, replications: usize, workers: Option<usize>, f: F) -> Result<Vec<S>, HarnessError>
where
    S: Send,
    F: Fn(usize, Trajectory) -> Result<S, HarnessError> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..replications).into_par_iter().map(|i| f(i, plan.simulate(i)?)).collect())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

#[derive(Serialize)]
struct TrajectoryHeader<'a> {
    replication: usize,
    seed: u64,
    config_hash: &'a str,
    dim: usize,
    steps: usize,
    diverged_at: Option<usize>,
}

#[derive(Serialize)]
struct StepRecord<'a> {
    t: usize,
    x: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    u: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    link: Option<Link>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    in_range: Option<bool>,
}

pub fn trajectory_file(rep: usize) -> String {
    format!("trajectories/rep_{rep:05}.jsonl")
}

/// One JSON header line, then one line per step; the final line holds `x_T`.
pub fn write_trajectory(path: &Path, rep: usize, traj: &Trajectory) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let header = TrajectoryHeader {
        replication: rep,
        seed: traj.seed,
        config_hash: &traj.config_hash,
        dim: traj.dim,
        steps: traj.len(),
        diverged_at: traj.diverged_at,
    };
    let mut line = |v: String| writeln!(w, "{v}").map_err(io_err(path));
    line(serde_json::to_string(&header).expect("header serializes"))?;
    for t in 0..=traj.len() {
        let step = t < traj.len();
        let rec = StepRecord {
            t,
            x: traj.state(t),
            u: step.then(|| traj.control(t)),
            link: step.then(|| traj.links[t]),
            grid: traj.grid.get(t).copied(),
            in_range: traj.in_range.get(t).copied(),
        };
        line(serde_json::to_string(&rec).expect("step serializes"))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn prepare_dir(out: &Path, trajectories: bool) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    if trajectories {
        let dir = out.join("trajectories");
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    Ok(())
}

fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<(), HarnessError> {
    let path = out.join("manifest.json");
    write_json(&path, manifest).map_err(HarnessError::from)
}

fn write_config(out: &Path, cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    let value: serde_json::Value = serde_json::from_str(&cfg.canonical_json()).expect("canonical json parses");
    write_json(&out.join("config.json"), &value).map_err(HarnessError::from)
}

/// Run every replication and keep all trajectories in memory. With `out`,
/// trajectories, the canonical config and the manifest are written there.
pub fn run_closed_loop(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<(Vec<Trajectory>, RunManifest), HarnessError> {
    let plan = Plan::from_config(cfg)?;
    if let Some(dir) = out {
        prepare_dir(dir, true)?;
    }
    let trajectories = run_map(&plan, cfg.replications, cfg.workers, |i, t| {
        if let Some(dir) = out {
            write_trajectory(&dir.join(trajectory_file(i)), i, &t)?;
        }
        Ok(t)
    })?;
    let mut files: Vec<String> = vec!["config.json".into(), "manifest.json".into()];
    if out.is_some() {
        files.extend((0..cfg.replications).map(trajectory_file));
    }
    files.sort();
    let manifest = RunManifest {
        config_hash: cfg.hash(),
        version: VERSION.into(),
        seeds: (0..cfg.replications).map(|i| plan.replication_seed(i)).collect(),
        files,
    };
    if let Some(dir) = out {
        write_config(dir, cfg)?;
        write_manifest(dir, &manifest)?;
    }
    Ok((trajectories, manifest))
}

/// Estimator settings resolved against the plan.
#[derive(Debug, Clone)]
struct Setup {
    escape: Option<EscapeAccumulator>,
    cesaro: Option<CesaroAccumulator>,
    drift: Option<DriftAccumulator>,
    tail: Option<TailAccumulator>,
    box_radius: f64,
    rate: RateOptions,
    tail_window: usize,
    snapshot_times: Vec<usize>,
}

fn log_spaced(horizon: usize) -> Vec<usize> {
    let mut times = Vec::new();
    let mut decade = 1usize;
    while decade <= horizon {
        for m in [1, 2, 5] {
            if m * decade <= horizon {
                times.push(m * decade);
            }
        }
        decade = decade.saturating_mul(10);
    }
    times.push(horizon);
    times.sort_unstable();
    times.dedup();
    times
}

impl Setup {
    fn new(cfg: &ExperimentConfig, plan: &Plan) -> Result<Self, HarnessError> {
        let est = &cfg.estimators;
        let zoom = match &plan.coder {
            CoderPlan::Zoom(p) => Some(p),
            _ => None,
        };
        let scale = plan.coder.zoom_params().map_or(1.0, |p| p.delta0);
        let box_radius = est.box_radius.unwrap_or(1e3 * scale);
        if !(box_radius > 0.0) {
            return Err(HarnessError::Config("box_radius must be positive".into()));
        }
        let escape_times = if est.escape_times.is_empty() { log_spaced(cfg.horizon) } else { est.escape_times.clone() };
        let escape = if escape_times.len() >= 2 {
            Some(EscapeAccumulator::new(est.threshold, &escape_times)?)
        } else {
            None
        };
        let states = cfg.horizon + 1;
        let checkpoints = if est.cesaro_checkpoints.is_empty() {
            let mut c: Vec<usize> = [16, 8, 4, 2].iter().map(|d| states / d).filter(|n| *n > 0).collect();
            c.dedup();
            c
        } else {
            est.cesaro_checkpoints.clone()
        };
        if checkpoints.iter().any(|n| 2 * n > states) {
            return Err(HarnessError::Config("Cesaro checkpoints need 2N <= horizon + 1".into()));
        }
        let cesaro = if checkpoints.is_empty() {
            None
        } else {
            let radii = if est.cesaro_radii.is_empty() {
                [1e-3, 1e-2, 1e-1, 1.0].iter().map(|f| f * box_radius).collect()
            } else {
                est.cesaro_radii.clone()
            };
            if radii.iter().any(|r: &f64| !(*r > 0.0)) {
                return Err(HarnessError::Config("Cesaro radii must be positive".into()));
            }
            let boxes = radii.iter().map(|r| EventBox::centered(*r, plan.model.dim)).collect();
            Some(CesaroAccumulator::new(boxes, &checkpoints)?)
        };
        let drift = zoom.map(|p| DriftAccumulator::new(est.drift_threshold.unwrap_or(p.floor)));
        let tail = match zoom {
            Some(p) => {
                let edges = if est.tail_edges.is_empty() {
                    let mut e = vec![0.0];
                    e.extend([2.0, 8.0, 32.0, 128.0, 1024.0].iter().map(|m| m * p.floor));
                    e.push(f64::MAX);
                    e
                } else {
                    est.tail_edges.clone()
                };
                Some(TailAccumulator::new(&edges)?)
            }
            None => None,
        };
        Ok(Self {
            escape,
            cesaro,
            drift,
            tail,
            box_radius,
            rate: cfg.rate_options(),
            tail_window: est.tail_window.max(1),
            snapshot_times: cfg.snapshot_times.clone(),
        })
    }
}

/// Everything one replication contributes.
#[derive(Debug, Clone)]
struct RepAnalysis {
    diverged: bool,
    escape: Option<EscapeAccumulator>,
    cesaro: Option<CesaroAccumulator>,
    drift: Option<DriftAccumulator>,
    tail: Option<TailAccumulator>,
    stopping_verified: Option<bool>,
    rate: Option<ReplicationRate>,
    box_inside: u64,
    box_total: u64,
    tail_p99: f64,
    max_norm: f64,
    snapshots: Vec<f64>,
}

fn sup(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) })
}

fn analyze(plan: &Plan, setup: &Setup, traj: &Trajectory) -> Result<RepAnalysis, HarnessError> {
    let mut escape = setup.escape.clone();
    if let Some(e) = escape.as_mut() {
        e.add(traj);
    }
    let mut cesaro = setup.cesaro.clone();
    if let Some(c) = cesaro.as_mut() {
        c.add(traj)?;
    }
    let (mut drift, mut tail, mut stopping_verified) = (setup.drift.clone(), setup.tail.clone(), None);
    if traj.grid_info.is_some() {
        let record = stopping_times(traj)?;
        stopping_verified = Some(record.verify(traj));
        if let Some(d) = drift.as_mut() {
            d.add(&record);
        }
        if let Some(t) = tail.as_mut() {
            t.add(&record);
        }
    }
    let rate_seed = derive_seed(traj.seed, &[stream::RATE_NOISE]);
    let mut rate = replication_log_jacobian(&plan.model, traj, &setup.rate, rate_seed)?;
    if rate.is_none() {
        let from_start = RateOptions { burn_in: 0.0, ..setup.rate };
        rate = replication_log_jacobian(&plan.model, traj, &from_start, rate_seed)?;
    }
    let half = traj.len().div_ceil(2);
    let (mut box_inside, mut box_total) = (0, 0);
    for x in traj.states_iter().skip(half) {
        box_total += 1;
        box_inside += (sup(x) <= setup.box_radius) as u64;
    }
    let window = setup.tail_window.min(traj.len() + 1);
    let mut norms: Vec<f64> = traj.states_iter().skip(traj.len() + 1 - window).map(sup).collect();
    norms.sort_by(f64::total_cmp);
    let tail_p99 = norms[((norms.len() - 1) as f64 * 0.99).round() as usize];
    let max_norm = traj.states_iter().map(sup).fold(0.0, f64::max);
    let snapshots = setup.snapshot_times.iter().flat_map(|t| traj.state(*t).iter().copied()).collect();
    Ok(RepAnalysis {
        diverged: traj.diverged_at.is_some(),
        escape,
        cesaro,
        drift,
        tail,
        stopping_verified,
        rate,
        box_inside,
        box_total,
        tail_p99,
        max_norm,
        snapshots,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub t: f64,
    pub bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub lower: f64,
    pub upper: f64,
    pub k: usize,
    pub survival: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub config_hash: String,
    pub version: String,
    pub replications: usize,
    pub horizon: usize,
    pub diverged: usize,
    pub box_radius: f64,
    /// Fraction of states in `[-r, r]^N` over the second half of every run.
    pub box_mass_second_half: f64,
    /// Largest per-replication 99th percentile of `|x|_inf` over the final
    /// window; `None` once any replication diverged.
    pub tail_p99_max: Option<f64>,
    pub max_norm: Option<f64>,
    pub delta0: Option<f64>,
    pub stable: bool,
    pub non_ams_signature: bool,
    pub verdict_inconsistent: bool,
    pub stopping_times_verified: Option<bool>,
    pub cesaro_max_gap: Option<f64>,
    pub drift_b0: Option<f64>,
    pub drift_b0_ci: Option<(f64, f64)>,
    pub tail_decreasing: Option<bool>,
    pub escape_final: Option<EscapeRow>,
    pub entropy_slope: Option<f64>,
    pub entropy_slope_std_error: Option<f64>,
    pub notes: Vec<String>,
}

/// Full result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub bounds: BoundReport,
    pub manifest: RunManifest,
    pub escape: Vec<EscapeRow>,
    pub cesaro: Vec<CesaroRow>,
    pub drift: Option<DriftReport>,
    pub tail: Option<TailReport>,
    pub entropy: Option<GrowthFit>,
}

fn merge_into<T>(acc: &mut Option<T>, other: Option<T>, merge: impl FnOnce(&mut T, &T)) {
    match (acc.as_mut(), other) {
        (Some(a), Some(b)) => merge(a, &b),
        (None, Some(b)) => *acc = Some(b),
        _ => {}
    }
}

fn non_ams(cesaro: &[CesaroRow], diverged: usize) -> bool {
    if diverged > 0 {
        return true;
    }
    let Some(last_n) = cesaro.iter().map(|r| r.n).max() else { return false };
    let events = cesaro.iter().map(|r| r.event).max().unwrap_or(0);
    cesaro
        .iter()
        .filter(|r| r.n == last_n && r.event == events)
        .any(|r| r.average_doubled < 0.1 && r.average_doubled < r.average)
}

/// Simulate, fold every replication into the estimators in index order,
/// compute bounds and verdicts, and persist artifacts under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutcome, HarnessError> {
    let plan = Plan::from_config(cfg)?;
    let setup = Setup::new(cfg, &plan)?;
    let store = out.filter(|_| cfg.store_trajectories);
    if let Some(dir) = out {
        prepare_dir(dir, store.is_some())?;
    }
    let reps = run_map(&plan, cfg.replications, cfg.workers, |i, traj| {
        if let Some(dir) = store {
            write_trajectory(&dir.join(trajectory_file(i)), i, &traj)?;
        }
        analyze(&plan, &setup, &traj)
    })?;

    let mut escape = None;
    let mut cesaro = None;
    let mut drift = None;
    let mut tail = None;
    let mut rates = Vec::new();
    let (mut inside, mut total, mut diverged) = (0u64, 0u64, 0usize);
    let mut verified = None;
    let mut tail_p99_max = 0.0f64;
    let mut max_norm = 0.0f64;
    let dim = plan.model.dim;
    let mut snaps: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.replications * dim); setup.snapshot_times.len()];
    for r in reps {
        merge_into(&mut escape, r.escape, EscapeAccumulator::merge);
        merge_into(&mut cesaro, r.cesaro, CesaroAccumulator::merge);
        merge_into(&mut drift, r.drift, DriftAccumulator::merge);
        merge_into(&mut tail, r.tail, TailAccumulator::merge);
        rates.extend(r.rate);
        inside += r.box_inside;
        total += r.box_total;
        diverged += r.diverged as usize;
        if let Some(v) = r.stopping_verified {
            verified = Some(verified.unwrap_or(true) && v);
        }
        tail_p99_max = tail_p99_max.max(r.tail_p99);
        max_norm = max_norm.max(r.max_norm);
        for (i, s) in snaps.iter_mut().enumerate() {
            s.extend_from_slice(&r.snapshots[i * dim..(i + 1) * dim]);
        }
    }
    let escape_rows = escape.map(|e| e.rows()).unwrap_or_default();
    let cesaro_rows = cesaro.map(|c| c.rows()).unwrap_or_default();
    let drift = drift.map(|d| d.report());
    let tail = tail.map(|t| t.report());

    let mut notes = Vec::new();
    let entropy = if snaps.len() >= 3 && snaps.iter().all(|s| s.iter().all(|v| v.is_finite())) {
        let snapshots: Vec<Snapshot> = setup
            .snapshot_times
            .iter()
            .zip(snaps)
            .map(|(t, samples)| Snapshot { time: *t as f64, samples })
            .collect();
        match entropy_growth_rate(&snapshots, dim, DEFAULT_NEIGHBORS) {
            Ok(fit) => Some(fit),
            Err(e) => {
                notes.push(format!("entropy growth skipped: {e}"));
                None
            }
        }
    } else {
        if !setup.snapshot_times.is_empty() {
            notes.push("entropy growth skipped: needs three finite snapshot times".into());
        }
        None
    };

    let capacity = match &plan.channel {
        Some(ch) => ch.capacity(CAPACITY_TOLERANCE)?.capacity,
        None => 0.0,
    };
    let rate = combine_replications(&rates)?;
    let (l_inf, m_sup) = log_jacobian_range(&plan.model, &rate);
    let bounds = verdicts(&BoundInputs {
        capacity,
        rate,
        l_inf,
        m_sup,
        linear_bound: plan.model.eigenvalues().map(|e| linear_rate_bound(&e)),
        sufficiency_threshold: sufficiency_threshold(&plan.model).ok(),
        codec: match &plan.coder {
            CoderPlan::Zoom(p) => Some((p.rate_condition(), p.rate_bits())),
            _ => None,
        },
    });

    let box_mass = if total == 0 { 0.0 } else { inside as f64 / total as f64 };
    let stable = diverged == 0 && box_mass >= 0.5;
    let violated = !bounds.verdicts.ams_necessary || capacity < bounds.v_hat - 2.0 * bounds.v_hat_std_error;
    let verdict_inconsistent = stable && violated;
    if verdict_inconsistent {
        notes.push("necessary rate condition violated while the run looks stable".into());
    }
    if let Some(d) = &drift {
        if d.underpowered {
            notes.push(format!("drift check underpowered: {} epochs above F", d.epochs_above));
        }
    }
    if let Some(t) = &tail {
        if t.underpowered {
            notes.push("tail check underpowered".into());
        }
    }
    let summary = RunSummary {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        version: VERSION.into(),
        replications: cfg.replications,
        horizon: cfg.horizon,
        diverged,
        box_radius: setup.box_radius,
        box_mass_second_half: box_mass,
        tail_p99_max: tail_p99_max.is_finite().then_some(tail_p99_max),
        max_norm: max_norm.is_finite().then_some(max_norm),
        delta0: plan.coder.zoom_params().map(|p| p.delta0),
        stable,
        non_ams_signature: non_ams(&cesaro_rows, diverged),
        verdict_inconsistent,
        stopping_times_verified: verified,
        cesaro_max_gap: cesaro_rows.iter().map(|r| r.gap).reduce(f64::max),
        drift_b0: drift.as_ref().map(|d| d.b0),
        drift_b0_ci: drift.as_ref().map(|d| d.b0_ci),
        tail_decreasing: tail.as_ref().map(|t| t.tail_decreasing),
        escape_final: escape_rows.last().cloned(),
        entropy_slope: entropy.as_ref().map(|f| f.slope),
        entropy_slope_std_error: entropy.as_ref().map(|f| f.slope_std_error),
        notes,
    };

    let mut files = vec!["config.json".to_string(), "manifest.json".into(), "summary.json".into()];
    files.extend(["bounds.json", "bounds.txt"].map(String::from));
    if let Some(dir) = out {
        write_config(dir, cfg)?;
        write_json(&dir.join("summary.json"), &summary)?;
        write_json(&dir.join("bounds.json"), &bounds)?;
        write_text(&dir.join("bounds.txt"), &bounds.render_table())?;
        let mut csv = |name: &str, f: &dyn Fn(&PathBuf) -> Result<(), HarnessError>| {
            let path = dir.join(name);
            f(&path)?;
            files.push(name.to_string());
            Ok::<_, HarnessError>(())
        };
        if !escape_rows.is_empty() {
            csv("escape.csv", &|p| Ok(write_csv(p, &escape_rows)?))?;
        }
        if !cesaro_rows.is_empty() {
            csv("cesaro.csv", &|p| Ok(write_csv(p, &cesaro_rows)?))?;
        }
        if let Some(d) = &drift {
            csv("drift.csv", &|p| Ok(write_csv(p, &d.rows)?))?;
        }
        if let Some(t) = &tail {
            let rows: Vec<TailRow> = t
                .bins
                .iter()
                .flat_map(|b| {
                    b.survival.iter().enumerate().map(|(k, s)| TailRow {
                        lower: b.lower,
                        upper: b.upper,
                        k: k + 1,
                        survival: *s,
                    })
                })
                .collect();
            csv("tail.csv", &|p| Ok(write_csv(p, &rows)?))?;
            csv("tail.json", &|p| Ok(write_json(p, t)?))?;
        }
        if let Some(fit) = &entropy {
            let rows: Vec<EntropyRow> = fit.points.iter().map(|(t, bits)| EntropyRow { t: *t, bits: *bits }).collect();
            csv("entropy.csv", &|p| Ok(write_csv(p, &rows)?))?;
        }
    }
    if store.is_some() {
        files.extend((0..cfg.replications).map(trajectory_file));
    }
    files.sort();
    let manifest = RunManifest {
        config_hash: cfg.hash(),
        version: VERSION.into(),
        seeds: (0..cfg.replications).map(|i| plan.replication_seed(i)).collect(),
        files,
    };
    if let Some(dir) = out {
        write_manifest(dir, &manifest)?;
    }
    Ok(RunOutcome {
        summary,
        bounds,
        manifest,
        escape: escape_rows,
        cesaro: cesaro_rows,
        drift,
        tail,
        entropy,
    })
}
