//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! each, and exits nonzero if any fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use zoomlab::bounds::BoundReport;
use zoomlab::channel::{binary_entropy, ChannelModel};
use zoomlab::codec::{uniform_quantize, FiniteMemoryPolicy, FixedQuantizerPolicy, Received, ZoomDecoder, ZoomEncoder, ZoomParams};
use zoomlab::dynamics::{NoiseStream, SystemModel};
use zoomlab::estimators::{entropy_estimate, escape_probability, transience_probe, Threshold, TransienceConfig};
use zoomlab::harness::{run_bode, run_closed_loop, run_experiment, BodeExperiment, ExperimentConfig, RunOutcome};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn oracle_quantize(x: f64, k: u32, delta: f64) -> f64 {
    let half = k as f64 / 2.0;
    if x < -half * delta || x > half * delta {
        return 0.0;
    }
    if x == half * delta {
        return (k as f64 - 1.0) / 2.0 * delta;
    }
    for i in 1..=k {
        let lo = (i as f64 - 1.0 - half) * delta;
        let hi = (i as f64 - half) * delta;
        if lo <= x && x < hi {
            return (i as f64 - (k as f64 + 1.0) / 2.0) * delta;
        }
    }
    unreachable!("{x} is inside the range")
}

fn quantizer() -> Verdict {
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for k in [2u32, 4, 8, 16] {
        for delta in [0.5, 1.0, 2.0] {
            let edge = (k as f64 / 2.0 + 1.0) * delta;
            let mut xs: Vec<f64> = (0..10_000).map(|i| -edge + 2.0 * edge * i as f64 / 9_999.0).collect();
            for i in 0..=k {
                let b = (i as f64 - k as f64 / 2.0) * delta;
                xs.extend([b, b.next_up(), b.next_down()]);
            }
            let top = k as f64 / 2.0 * delta;
            xs.extend([top, -top, top.next_up(), -top.next_down()]);
            for x in xs {
                checked += 1;
                if uniform_quantize(x, k, delta).to_bits() != oracle_quantize(x, k, delta).to_bits() {
                    mismatches += 1;
                }
            }
        }
    }
    verdict(mismatches == 0, format!("{mismatches} mismatches over {checked} points"))
}

fn capacity() -> Verdict {
    let mut worst: f64 = 0.0;
    for p in [0.01, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.45] {
        let c = ChannelModel::<f64>::bsc(p).unwrap().capacity(1e-9).unwrap().capacity;
        worst = worst.max((c - (1.0 - binary_entropy(p))).abs());
    }
    for eps in [0.0, 0.2, 0.5, 0.9] {
        let c = ChannelModel::<f64>::erasure(2, eps).unwrap().capacity(1e-9).unwrap().capacity;
        worst = worst.max((c - (1.0 - eps)).abs());
    }
    let mut exact = true;
    for m in [2usize, 3, 5, 8, 65, 256] {
        let c = ChannelModel::<f64>::noiseless(m).unwrap().capacity(1e-9).unwrap().capacity;
        exact &= c == (m as f64).log2();
    }
    verdict(worst < 1e-6 && exact, format!("max error {worst:.2e}, noiseless exact: {exact}"))
}

fn entropy() -> Verdict {
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut draw = |count: usize| -> Vec<f64> {
        (0..count)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            })
            .collect()
    };
    let mut worst: f64 = 0.0;
    for sigma in [0.5, 1.0, 2.0] {
        let x: Vec<f64> = draw(n).into_iter().map(|z| sigma * z).collect();
        let est = entropy_estimate(&x, 1, 4).unwrap().bits;
        let exact = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).log2();
        worst = worst.max((est - exact).abs());
    }
    let x = draw(2 * n);
    let ax: Vec<f64> = x.chunks(2).flat_map(|p| [2.0 * p[0], 3.0 * p[1]]).collect();
    let shift = entropy_estimate(&ax, 2, 4).unwrap().bits - entropy_estimate(&x, 2, 4).unwrap().bits;
    let scaling = (shift - 6f64.log2()).abs();
    verdict(
        worst < 0.05 && scaling < 0.1,
        format!("Gaussian max error {worst:.4} bits, diag(2,3) scaling error {scaling:.4} bits"),
    )
}

fn open_loop_growth() -> Verdict {
    let cfg = ExperimentConfig::from_toml(
        "horizon = 40\nreplications = 10000\nseed = 404\nstore_trajectories = false\n\
         snapshot_times = [5, 10, 15, 20, 25, 30, 35, 40]\n\
         [model]\nkind = \"linear\"\ndiag = [2.0]\nnoise_std = 1.0\n[coder]\nkind = \"open_loop\"\n",
    )
    .unwrap();
    let fit = run_experiment(&cfg, None).unwrap().entropy.unwrap();
    verdict((fit.slope - 1.0).abs() <= 0.1, format!("slope {:.4} bits/step", fit.slope))
}

fn benchmark_outcome() -> RunOutcome {
    let mut cfg = ExperimentConfig::load(&config_path("benchmark.toml")).unwrap();
    cfg.estimators.cesaro_radii = vec![0.25, 0.5, 1.0, 2.0];
    run_experiment(&cfg, None).unwrap()
}

fn stabilization(out: &RunOutcome) -> Verdict {
    let s = &out.summary;
    let limit = 1e3 * s.delta0.unwrap_or(f64::NAN);
    let bounded = s.diverged == 0 && s.max_norm.is_some_and(|m| m <= limit);
    let p99 = s.tail_p99_max.unwrap_or(f64::INFINITY);
    let gap = s.cesaro_max_gap.unwrap_or(f64::INFINITY);
    let drift = out.drift.as_ref().unwrap();
    let pass = bounded && p99 <= limit && gap < 0.02 && drift.b0 > 0.0 && drift.b0_ci.0 > 0.0;
    verdict(
        pass,
        format!(
            "p99 tail max {p99:.3}, max |x| {:.3} (limit {limit:.1}), Cesaro gap {gap:.2e}, b0 {:.4} CI [{:.4}, {:.4}]",
            s.max_norm.unwrap_or(f64::INFINITY),
            drift.b0,
            drift.b0_ci.0,
            drift.b0_ci.1
        ),
    )
}

fn one_bit() -> (Verdict, BoundReport) {
    let cfg = ExperimentConfig::load(&config_path("one_bit.toml")).unwrap();
    let out = run_experiment(&cfg, None).unwrap();
    let (trajs, _) = run_closed_loop(&cfg, None).unwrap();
    let times = [500, 1000];
    let last = escape_probability(&trajs, Threshold::Linear, &times).unwrap().remove(1);
    let boxed = escape_probability(&trajs, Threshold::Constant { value: out.summary.box_radius }, &times)
        .unwrap()
        .remove(1);
    let pass = last.fraction <= 0.55 && boxed.fraction < 0.5;
    (
        verdict(
            pass,
            format!(
                "fraction inside b(T)=T at T=1000: {:.4} (CI up to {:.4}); box mass {:.4}",
                last.fraction, last.ci_high, boxed.fraction
            ),
        ),
        out.bounds,
    )
}

fn stopping_tail() -> (Verdict, BoundReport) {
    let cfg = ExperimentConfig::from_toml(
        "name = \"tail\"\nhorizon = 100000\nreplications = 50\nseed = 7\nx0_std = 3.0\nstore_trajectories = false\n\
         [model]\nkind = \"benchmark\"\ngain = 1.2\ndim = 2\nnoise_std = 0.5\n\
         [coder]\nkind = \"zoom\"\nK = 8\nL = 0.01\n\
         [estimators]\ntail_edges = [0.0, 0.25, 0.5, 1.0e300]\n",
    )
    .unwrap();
    let out = run_experiment(&cfg, None).unwrap();
    let tail = out.tail.as_ref().unwrap();
    let top = tail.bins.iter().rev().find(|b| b.epochs > 0).unwrap();
    let r_hat = top.r_hat.unwrap_or(f64::NAN);
    let positive: Vec<f64> = top.survival.iter().copied().take_while(|p| *p > 0.0).collect();
    let log_decreasing = positive.windows(2).all(|w| w[1] < w[0]);
    let p2: Vec<String> = tail.bins.iter().map(|b| format!("{:.4}", b.tail_at(2))).collect();
    let pass = !tail.underpowered && r_hat > 1.0 && log_decreasing && tail.tail_decreasing;
    (
        verdict(
            pass,
            format!(
                "top bin [{}, inf): {} epochs, r_hat {r_hat:.3}, P(gap>=2) by bin [{}]",
                top.lower,
                top.epochs,
                p2.join(", ")
            ),
        ),
        out.bounds,
    )
}

fn synchronization() -> Verdict {
    let model = SystemModel::benchmark(1.2, 2, 0.5).unwrap();
    let params = ZoomParams {
        levels: 8,
        dim: 2,
        contraction: 1.8,
        grid_step: 0.5,
        zoomout_exp: 2,
        alpha_exp: 1,
        floor: 1.0,
        delta0: 0.7,
    };
    let alpha_floor = params.alpha() * params.floor;
    let mut failures = Vec::new();
    for (label, channel) in [
        ("noiseless", ChannelModel::<f64>::noiseless(65).unwrap()),
        ("erasure 0.2", ChannelModel::<f64>::erasure(65, 0.2).unwrap()),
    ] {
        let mut enc = ZoomEncoder::new(params.clone()).unwrap();
        let mut dec = ZoomDecoder::new(params.clone()).unwrap();
        let mut noise = NoiseStream::new(11, &model.noise);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut x = vec![3.0, -2.0];
        let mut w = vec![0.0; 2];
        let (mut desync, mut below, mut off_grid, mut erased) = (0u64, 0u64, 0u64, 0u64);
        for _ in 0..1_000_000 {
            let q = enc.encode(&x).unwrap();
            let out = channel.transmit(q.symbol, &mut rng).unwrap();
            let received = if Some(out) == channel.erasure_symbol() {
                erased += 1;
                Received::Erased
            } else {
                Received::Symbol(out)
            };
            enc.feedback(received);
            let d = dec.decode(received, &model).unwrap();
            noise.next_into(&mut w);
            x = model.step(&x, &d.control, &w).unwrap();
            let (es, ds) = (enc.state(), dec.state());
            desync += u64::from(es.grid != ds.grid);
            let delta: f64 = ds.bin_size(&params);
            below += u64::from(delta < alpha_floor);
            let steps = (delta / params.delta0).log2() / params.grid_step;
            off_grid += u64::from((steps - steps.round()).abs() > 1e-9);
        }
        if desync + below + off_grid > 0 {
            failures.push(format!("{label}: {desync} desync, {below} below alpha L, {off_grid} off grid"));
        }
        if label != "noiseless" && erased == 0 {
            failures.push(format!("{label}: no erasures drawn"));
        }
    }
    let detail = if failures.is_empty() {
        "10^6 steps per channel, grids identical, Delta >= alpha L, all on the s-grid".to_string()
    } else {
        failures.join("; ")
    };
    verdict(failures.is_empty(), detail)
}

fn bode() -> Verdict {
    let run = run_bode(&BodeExperiment { samples: 1 << 20, seed: 909, ..Default::default() }).unwrap();
    verdict(
        run.estimate.bits >= 0.85 && !run.estimate.nonstationary,
        format!("{:.4} bits over {} segments (bound {:.1})", run.estimate.bits, run.estimate.segments, run.eigen_bound),
    )
}

fn transience() -> Verdict {
    let model = SystemModel::linear(vec![2.0], 24.0).unwrap();
    let policy = FixedQuantizerPolicy::for_model(&model, 4, 1.0).unwrap();
    let u = policy.control_bound();
    let cfg = TransienceConfig {
        starts: vec![2.0 * u, 4.0 * u, 8.0 * u],
        set_upper: u,
        horizon: 1_000,
        replications: 10_000,
        escape_radius: 1e12,
        expansion_from: 0.0,
        seed: 1010,
    };
    let rep = transience_probe(&model, &policy, &cfg).unwrap();
    let at_8u = rep.rows[2].upper;
    let fractions: Vec<String> = rep.rows.iter().map(|r| format!("{:.4}", r.upper)).collect();
    verdict(
        rep.decreasing && at_8u < 0.9,
        format!("U = {u}, return fractions [{}] at 2U, 4U, 8U", fractions.join(", ")),
    )
}

fn bound_consistency(runs: &[(&str, BoundReport)]) -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, b) in runs {
        let ordered = b.is_ordered(2.0);
        let exact = b.linear_bound.is_none_or(|lin| b.v_hat == lin);
        pass &= ordered && exact;
        notes.push(format!("{name}: {:.4} <= {:.4} <= {:.4}{}", b.l_inf, b.v_hat, b.m_sup, if exact { "" } else { " (not exact)" }));
    }
    verdict(pass, notes.join("; "))
}

fn catalog_run(toml: &str) -> BoundReport {
    run_experiment(&ExperimentConfig::from_toml(toml).unwrap(), None).unwrap().bounds
}

fn main() {
    let budgets = [1, 5, 30, 120, 600, 300, 300, 60, 180, 180, 60].map(Duration::from_secs);
    let names = [
        "quantizer matches direct evaluation",
        "capacity solver",
        "entropy estimator calibration",
        "open-loop entropy growth",
        "stabilization above threshold",
        "instability below the necessary bound",
        "stopping-time tail",
        "codec synchronization",
        "log-sensitivity lower bound",
        "transience of finite-memory coders",
        "bound consistency",
    ];
    let mut results: Vec<(Verdict, Duration)> = Vec::new();
    let mut timed = |f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = f();
        results.push((v, start.elapsed()));
    };
    let mut bounds: Vec<(&str, BoundReport)> = Vec::new();
    timed(&mut quantizer);
    timed(&mut capacity);
    timed(&mut entropy);
    timed(&mut open_loop_growth);
    timed(&mut || {
        let out = benchmark_outcome();
        bounds.push(("benchmark", out.bounds.clone()));
        stabilization(&out)
    });
    timed(&mut || {
        let (v, b) = one_bit();
        bounds.push(("one_bit", b));
        v
    });
    timed(&mut || {
        let (v, b) = stopping_tail();
        bounds.push(("tail", b));
        v
    });
    timed(&mut synchronization);
    timed(&mut bode);
    timed(&mut transience);
    timed(&mut || {
        bounds.push((
            "linear diag(2,3)",
            catalog_run(
                "horizon = 2000\nreplications = 20\nseed = 5\nstore_trajectories = false\n\
                 [model]\nkind = \"linear\"\ndiag = [2.0, 3.0]\nnoise_std = 0.5\n[coder]\nkind = \"zoom\"\nK = 16\nzoomout_exp = 2\n",
            ),
        ));
        bounds.push((
            "expanding",
            catalog_run(
                "horizon = 2000\nreplications = 20\nseed = 6\nstore_trajectories = false\n\
                 [model]\nkind = \"expanding\"\nslope = 2.0\nnoise_std = 0.5\n[coder]\nkind = \"zoom\"\nK = 16\nzoomout_exp = 2\n",
            ),
        ));
        bound_consistency(&bounds)
    });

    let mut failed = 0;
    for (i, ((v, elapsed), budget)) in results.iter().zip(budgets).enumerate() {
        let in_time = *elapsed <= budget;
        let pass = v.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "{} criterion {:>2} {}: {} [{:.2}s of {}s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            names[i],
            v.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
