use std::collections::BTreeMap;
use std::path::Path;

use zoomlab::harness::{
    report, run_closed_loop, run_experiment, run_sweep, ExperimentConfig, HarnessError, SweepAxis,
};

fn benchmark(extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(&format!(
        r#"
name = "bench"
horizon = 400
replications = 6
seed = 99
x0_std = 4.0
{extra}
[model]
kind = "benchmark"
gain = 1.2
dim = 2
noise_std = 0.5
[channel]
kind = "erasure"
epsilon = 0.1
[coder]
kind = "zoom"
K = 8
L = 0.5
"#
    ))
    .unwrap()
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn identical_configs_give_identical_artifacts_across_worker_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut one = benchmark("");
    one.workers = Some(1);
    let mut four = benchmark("");
    four.workers = Some(4);
    run_experiment(&one, Some(a.path())).unwrap();
    run_experiment(&four, Some(b.path())).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert!(ta.contains_key("trajectories/rep_00005.jsonl"));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (name, bytes) in &ta {
        assert!(bytes == &tb[name], "{name} differs");
    }
}

#[test]
fn manifest_lists_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&benchmark(""), Some(dir.path())).unwrap();
    let tree = read_tree(dir.path());
    let listed: Vec<&String> = outcome.manifest.files.iter().collect();
    assert_eq!(tree.keys().collect::<Vec<_>>(), listed);
    assert_eq!(outcome.manifest.seeds.len(), 6);
    let config: serde_json::Value = serde_json::from_slice(&tree["config.json"]).unwrap();
    assert_eq!(config["seed"], 99);
}

#[test]
fn same_seed_reproduces_trajectory_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = benchmark("");
    let (ta, ma) = run_closed_loop(&cfg, Some(a.path())).unwrap();
    let (tb, mb) = run_closed_loop(&cfg, Some(b.path())).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(ma, mb);
    assert_eq!(read_tree(a.path()), read_tree(b.path()));
    assert!(ta.iter().all(|t| t.is_consistent() && t.config_hash == cfg.hash()));
}

#[test]
fn noiseless_zoom_loop_keeps_both_sides_on_one_grid() {
    use zoomlab::codec::{Received, ZoomDecoder, ZoomEncoder};
    let cfg = ExperimentConfig::from_toml(
        "horizon = 10\nreplications = 1\nseed = 3\nx0_std = 20.0\n\
         [model]\nkind = \"benchmark\"\ngain = 1.2\ndim = 2\nnoise_std = 0.5\n\
         [coder]\nkind = \"zoom\"\nK = 8\n",
    )
    .unwrap();
    let plan = zoomlab::harness::Plan::from_config(&cfg).unwrap();
    let params = plan.coder.zoom_params().unwrap().clone();
    let traj = plan.simulate(0).unwrap();
    // replay the logged states through a stand-alone encoder/decoder pair
    let mut enc = ZoomEncoder::new(params.clone()).unwrap();
    let mut dec = ZoomDecoder::new(params).unwrap();
    for t in 0..traj.len() {
        assert_eq!(enc.state().grid, traj.grid[t]);
        assert_eq!(dec.state().grid, traj.grid[t]);
        let q = enc.encode(traj.state(t)).unwrap();
        enc.feedback(Received::Symbol(q.symbol));
        let d = dec.decode(Received::Symbol(q.symbol), &plan.model).unwrap();
        assert_eq!(d.control.as_slice(), traj.control(t));
        assert!(enc.state().synchronized_with(dec.state()));
    }
}

#[test]
fn open_loop_median_grows_like_two_to_the_t() {
    let cfg = ExperimentConfig::from_toml(
        "horizon = 30\nreplications = 201\nseed = 4\nx0_std = 1.0\n\
         [model]\nkind = \"linear\"\ndiag = [2.0]\nnoise_std = 1.0\n[coder]\nkind = \"open_loop\"\n",
    )
    .unwrap();
    let (trajs, _) = run_closed_loop(&cfg, None).unwrap();
    let mut logs: Vec<f64> = trajs.iter().map(|t| t.state(30)[0].abs().log2()).collect();
    logs.sort_by(f64::total_cmp);
    let median = logs[100];
    // x_30 = 2^30 (x_0 + sum 2^-k w_k): median |.| of N(0, 1 + 1/3)
    let oracle = 30.0 + (0.674 * (4.0f64 / 3.0).sqrt()).log2();
    assert!((median - oracle).abs() < 0.5, "{median} vs {oracle}");
}

#[test]
fn alphabet_mismatch_fails_before_simulating() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = benchmark("");
    cfg.channel = Some(zoomlab::harness::ChannelSpec::Noiseless { symbols: Some(32) });
    let err = run_experiment(&cfg, Some(&dir.path().join("never"))).unwrap_err();
    assert!(matches!(err, HarnessError::Config(_)));
    assert!(!dir.path().join("never").exists());
}

#[test]
fn sweep_over_levels_flips_stability() {
    let template = ExperimentConfig::from_toml(
        "horizon = 5000\nreplications = 12\nseed = 2\nx0_std = 5.0\nstore_trajectories = false\n\
         [model]\nkind = \"linear\"\ndiag = [4.0]\nnoise_std = 0.5\n\
         [coder]\nkind = \"zoom\"\nK = 2\nL = 1.0\nzoomout_exp = 3\n",
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (rows, _) = run_sweep(&template, SweepAxis::Levels, &[2.0, 4.0, 16.0], Some(dir.path())).unwrap();
    assert!(!rows[0].stable && !rows[1].stable);
    assert!(rows[2].stable);
    assert_eq!(rows[2].codec_rate_condition, Some(true));
    assert_eq!(rows[0].codec_rate_condition, Some(false));
    assert!(dir.path().join("sweep.csv").is_file());
    assert!(dir.path().join("K_002/summary.json").is_file());
}

#[test]
fn report_names_missing_and_corrupt_files() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&benchmark(""), Some(dir.path())).unwrap();
    let rep = report(dir.path()).unwrap();
    assert!(rep.text.contains("C >= V_hat: satisfied"), "{}", rep.text);
    assert!(!rep.inconsistent());

    std::fs::write(dir.path().join("escape.csv"), "t,log2_radius\nnot-a-number,1\n").unwrap();
    match report(dir.path()) {
        Err(HarnessError::Corrupt { path, .. }) => assert_eq!(path, "escape.csv"),
        other => panic!("{other:?}"),
    }
    std::fs::remove_file(dir.path().join("drift.csv")).unwrap();
    match report(dir.path()) {
        Err(HarnessError::Missing(files)) => assert_eq!(files, vec!["drift.csv".to_string()]),
        other => panic!("{other:?}"),
    }
    std::fs::remove_file(dir.path().join("manifest.json")).unwrap();
    assert!(matches!(report(dir.path()), Err(HarnessError::Missing(_))));
}

#[test]
fn under_rated_run_shows_non_ams_signature() {
    let cfg = ExperimentConfig::from_toml(
        "horizon = 2000\nreplications = 20\nseed = 8\nstore_trajectories = false\n\
         [model]\nkind = \"linear\"\ndiag = [4.0]\nnoise_std = 1.0\n\
         [coder]\nkind = \"zoom\"\nK = 2\nzoomout_exp = 3\n",
    )
    .unwrap();
    let out = run_experiment(&cfg, None).unwrap();
    assert!(!out.summary.stable);
    assert!(out.summary.non_ams_signature);
    assert!(!out.bounds.verdicts.ams_necessary);
}
