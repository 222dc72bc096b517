use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::warn;
use trgs_cli::config::{parse_config, ExperimentConfig};
use trgs_cli::experiment::{build_problem, initial_point, is_variance_reduced, resolve_schedule, run_experiment, RunOptions};
use trgs_cli::matched::matched_sample_comparison;
use trgs_cli::validation::{run_suite, select, ALL_SOFT_BUDGET};
use trgs_cli::ExperimentError;

const EXIT_RUN: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser)]
#[command(name = "trgs", version, about = "Trust-region methods for generalized-smooth stochastic optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seed sweep and write per-seed and aggregate CSV traces.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed_override: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Scales the iteration budget (rounded up).
        #[arg(long, default_value_t = 1.0)]
        budget_multiplier: f64,
        /// Also write an aggregate averaged over windows of this many iterations.
        #[arg(long)]
        smooth: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run validation suites: `all`, a suite name or a comma-separated list.
    Validate {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Compare the variance-reduced estimator with a plain minibatch at matched samples.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })?;
    parse_config(&text).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3e}")).unwrap_or_else(|| "-".into())
}

fn cmd_run(cfg: &ExperimentConfig, out: &Path, opts: &RunOptions) -> ExitCode {
    if opts.jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(EXIT_CONFIG);
    }
    if opts.smooth == Some(0) {
        eprintln!("error: --smooth must be at least 1");
        return ExitCode::from(EXIT_CONFIG);
    }
    match run_experiment(cfg, out, opts) {
        Ok(summary) => {
            println!(
                "{:>6} {:>28} {:>10} {:>10} {:>10} {:>10} {:>9} {:>10}",
                "seed", "status", "grad@t_bar", "best_grad", "samples", "verdict", "lam_min", "worst_acc"
            );
            for s in &summary.seeds {
                println!(
                    "{:>6} {:>28} {:>10} {:>10} {:>10} {:>10} {:>9} {:>10}",
                    s.seed,
                    s.status,
                    cell(s.grad_norm_t_bar),
                    cell(s.best_grad_norm),
                    s.samples,
                    s.verdict.as_deref().unwrap_or("-"),
                    cell(s.lambda_min),
                    s.worst_class.map(|a| format!("{:.4}", a)).unwrap_or_else(|| "-".into())
                );
            }
            println!("wrote {} files to {}", summary.files.len(), out.display());
            if summary.failures > 0 {
                eprintln!("error: {} of {} seeds failed", summary.failures, summary.seeds.len());
                ExitCode::from(EXIT_RUN)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(ExperimentError::Config(msg)) => {
            eprintln!("error: configuration: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUN)
        }
    }
}

fn cmd_validate(selector: &str) -> ExitCode {
    let suites = match select(selector) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let start = Instant::now();
    let mut failed = 0;
    for name in &suites {
        let c = run_suite(name);
        failed += usize::from(!c.pass);
        println!(
            "{:<14} {} {:>7.2}s  {}",
            c.suite,
            if c.pass { "PASS" } else { "FAIL" },
            c.elapsed.as_secs_f64(),
            c.detail
        );
    }
    let total = start.elapsed();
    if suites.len() > 1 && total > ALL_SOFT_BUDGET {
        warn!("validation took {:.0}s, over the {}s budget", total.as_secs_f64(), ALL_SOFT_BUDGET.as_secs());
    }
    println!("{} of {} suites passed in {:.1}s", suites.len() - failed, suites.len(), total.as_secs_f64());
    if failed > 0 {
        ExitCode::from(EXIT_VALIDATION)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_bench(cfg: &ExperimentConfig) -> ExitCode {
    if !is_variance_reduced(cfg) {
        eprintln!("error: bench needs a variance-reduced method (fotrgs-vr, sotrgs-vr, or manual with s3)");
        return ExitCode::from(EXIT_CONFIG);
    }
    let Some(policy) = cfg.policy() else {
        eprintln!("error: bench needs a trust-region method");
        return ExitCode::from(EXIT_CONFIG);
    };
    let seed = cfg.run.seeds[0];
    let prepared = build_problem(cfg, seed).and_then(|p| {
        let x0 = initial_point(cfg, &p, seed)?;
        let s = resolve_schedule(cfg, &p, &x0, 1.0)?;
        Ok((p, x0, s))
    });
    let (problem, x0, schedule) = match prepared {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let c = match matched_sample_comparison(problem.oracle.as_ref(), policy, &schedule, &x0, &cfg.run.seeds) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUN);
        }
    };
    println!(
        "S1 = {}, S3 = {}, q = {}, plain batch = {}, {} seeds",
        schedule.s1,
        schedule.s3.unwrap_or(0),
        schedule.q,
        c.plain_batch,
        c.seeds
    );
    println!("{:>6} {:>10} {:>12} {:>10} {:>12}", "step", "vr_samples", "vr_error", "mb_samples", "mb_error");
    for k in 0..c.vr_error.len() {
        println!(
            "{:>6} {:>10.0} {:>12.4e} {:>10.0} {:>12.4e}",
            k + 1,
            c.vr_samples[k],
            c.vr_error[k],
            c.plain_samples[k],
            c.plain_error[k]
        );
    }
    println!("VR error lower at {:.1}% of steps", 100.0 * c.vr_lower_fraction());
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run { config, seed_override, jobs, budget_multiplier, smooth, out } => match load(&config) {
            Ok(cfg) => cmd_run(&cfg, &out, &RunOptions { jobs, budget_multiplier, smooth, seed_override }),
            Err(code) => code,
        },
        Command::Validate { suite } => cmd_validate(&suite),
        Command::Bench { config } => match load(&config) {
            Ok(cfg) => cmd_bench(&cfg),
            Err(code) => code,
        },
    }
}
