use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use zoomlab::channel::CAPACITY_TOLERANCE;
use zoomlab::harness::{
    build_channel, report, run_bode, run_experiment, run_sweep, BodeExperiment, ExperimentConfig, HarnessError, Plan,
    SweepAxis,
};

#[derive(Parser)]
#[command(name = "zoomlab", version, about = "Zoom-coded control over finite-capacity channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if let Some(r) = self.reps {
            cfg.replications = r;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.display().to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> Option<PathBuf> {
        self.out.clone().or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Simulate(RunArgs),
    /// Run one experiment per value of a parameter axis.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// rate, epsilon, gain or K.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
    },
    /// Print the rate-bound table for a configuration.
    Bounds(RunArgs),
    /// Print the capacity of the configured channel.
    Capacity {
        #[arg(long)]
        config: PathBuf,
    },
    /// Log-sensitivity integral of a linear-Gaussian loop.
    Bode {
        #[arg(long, default_value_t = 2.0)]
        gain: f64,
        #[arg(long, default_value_t = 1 << 20)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collate the artifacts of a finished run.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| HarnessError::Io { path: parent.display().to_string(), source })?;
    }
    std::fs::write(path, text).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })
}

fn execute(cli: Cli) -> Result<u8, HarnessError> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = args.load()?;
            let out = args.out_dir(&cfg);
            let outcome = run_experiment(&cfg, out.as_deref())?;
            print!("{}", outcome.bounds.render_table());
            println!("empirical stability: {}", if outcome.summary.stable { "stable" } else { "not stable" });
            if let Some(dir) = out {
                println!("artifacts: {}", dir.display());
            }
            Ok(if outcome.summary.verdict_inconsistent { 2 } else { 0 })
        }
        Command::Sweep { run, axis, values } => {
            let axis: SweepAxis = axis.parse()?;
            let cfg = run.load()?;
            let out = run.out_dir(&cfg);
            let (rows, _) = run_sweep(&cfg, axis, &values, out.as_deref())?;
            println!("{:>10} {:>10} {:>10} {:>8} {:>8}", axis.name(), "C", "V_hat", "rate ok", "stable");
            for r in &rows {
                let ok = r.codec_rate_condition.map_or("n/a".to_string(), |b| b.to_string());
                println!("{:>10} {:>10.4} {:>10.4} {:>8} {:>8}", r.value, r.capacity, r.v_hat, ok, r.stable);
            }
            let bad = rows.iter().any(|r| r.stable && (!r.ams_necessary || !r.phr_necessary));
            Ok(if bad { 2 } else { 0 })
        }
        Command::Bounds(args) => {
            let mut cfg = args.load()?;
            cfg.store_trajectories = false;
            let outcome = run_experiment(&cfg, None)?;
            print!("{}", outcome.bounds.render_table());
            if let Some(dir) = args.out_dir(&cfg) {
                let json = serde_json::to_string_pretty(&outcome.bounds).expect("bounds serialize");
                write_file(&dir.join("bounds.json"), &(json + "\n"))?;
                write_file(&dir.join("bounds.txt"), &outcome.bounds.render_table())?;
            }
            Ok(if outcome.summary.verdict_inconsistent { 2 } else { 0 })
        }
        Command::Capacity { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let plan = Plan::from_config(&cfg)?;
            let spec = cfg.channel.clone().ok_or_else(|| HarnessError::Config("config has no channel".into()))?;
            let channel = build_channel(&spec, plan.coder.symbols().max(2))?;
            let r = channel.capacity(CAPACITY_TOLERANCE)?;
            println!("inputs {} outputs {}", channel.inputs(), channel.outputs());
            println!("capacity {:.12} bits ({} iterations, gap {:.2e})", r.capacity, r.iterations, r.gap);
            for (i, p) in r.input_distribution.iter().enumerate() {
                println!("p[{i}] = {p:.6}");
            }
            Ok(0)
        }
        Command::Bode { gain, samples, seed, out } => {
            let exp = BodeExperiment { gain, samples, seed, ..Default::default() };
            let run = run_bode(&exp)?;
            println!("log-sensitivity integral {:.4} bits (bound {:.4}, {} segments)", run.estimate.bits, run.eigen_bound, run.estimate.segments);
            if run.estimate.nonstationary {
                println!("warning: output record looks nonstationary");
            }
            if let Some(dir) = out {
                let json = serde_json::to_string_pretty(&run).expect("bode run serializes");
                write_file(&dir.join("bode.json"), &(json + "\n"))?;
            }
            Ok(0)
        }
        Command::Report { out } => {
            let rep = report(&out)?;
            print!("{}", rep.text);
            let json = serde_json::to_string_pretty(&rep.to_json()).expect("report serializes");
            write_file(&out.join("report.json"), &(json + "\n"))?;
            Ok(if rep.inconsistent() { 2 } else { 0 })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
