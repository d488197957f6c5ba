//! Command-line front end. Every subcommand parses its inputs, calls one
//! library routine and prints the result; numbers are printed with 17
//! significant digits.
//!
//! Exit codes: 0 on success, 1 on domain errors, 2 on usage errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::agents::{run_baseline, BaselineKind, BaselineParams, RunOptions};
use crate::error::{Error, Result};
use crate::hardbench::{
    build_alternative_instance, build_hard_instance, hard_run_diagnostics, select_z_tilde,
    stepwise_kl, z_tilde_candidates, HardInstanceFile,
};
use crate::harness::{fit_regret_slope, run_experiment, ExperimentConfig, RegretCurve};
use crate::linmdp::{stream_from_seed, validate_mdp, InstanceRecord, SparseLinearMdp};
use crate::sparsereg::{
    lasso_fit, matrix_from_csv, restricted_eigenvalue_estimate, LassoConfig, RegressionDataset,
};

#[derive(Debug, Parser)]
#[command(name = "sparse-rl", version, about = "Sparse linear MDP experiments")]
pub struct Cli {
    /// Master seed; overrides the seed stored in a config.
    #[arg(long, global = true, env = "SPARSE_RL_SEED")]
    pub seed: Option<u64>,
    /// Output directory for files written by the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print only the essential result lines.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every structural invariant of an instance file.
    Validate { instance: PathBuf },
    /// Run an experiment sweep from a JSON config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build a hard instance and optionally run the stopping-time and KL diagnostics.
    Hardbench {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        s: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 64)]
        cap: usize,
        #[arg(long, default_value_t = 3)]
        horizon: usize,
        /// Episodes of uniform play for the diagnostics; defaults to `d`.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        diagnose: bool,
    },
    /// Fit a Lasso to `y, phi_1, ..., phi_d` rows and print the weights.
    Lasso {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 1e-8)]
        tolerance: f64,
        #[arg(long, default_value_t = 10_000)]
        max_sweeps: usize,
    },
    /// Fit the log-log regret slope of a curve or summary CSV.
    Slope {
        #[arg(long)]
        curve: PathBuf,
    },
    /// Bracket the restricted eigenvalue of a PSD matrix.
    Re {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        s: usize,
        #[arg(long, default_value_t = 200)]
        budget: usize,
    },
}

fn g(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn dispatch<I, T>(args: I, out: &mut impl Write, err: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match run(&cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn load_instance(path: &Path) -> Result<SparseLinearMdp> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let record: InstanceRecord = if value.get("instance").is_some() {
        serde_json::from_value::<HardInstanceFile>(value)?.instance
    } else {
        serde_json::from_value(value)?
    };
    SparseLinearMdp::from_record(record)
}

fn io(e: std::io::Error) -> Error {
    Error::Io(e)
}

fn run(cli: &Cli, out: &mut impl Write, err: &mut impl Write) -> Result<i32> {
    match &cli.command {
        Command::Validate { instance } => {
            let mdp = load_instance(instance)?;
            let report = validate_mdp(&mdp);
            if report.is_valid() {
                writeln!(out, "OK").map_err(io)?;
                Ok(0)
            } else {
                for v in &report.violations {
                    writeln!(out, "{v}").map_err(io)?;
                }
                writeln!(err, "error: {} violations", report.violations.len()).map_err(io)?;
                Ok(1)
            }
        }
        Command::Simulate { config } => {
            let mut cfg = ExperimentConfig::load(config)?;
            if let Some(seed) = cli.seed {
                cfg.master_seed = seed;
            }
            if let Some(dir) = &cli.out {
                cfg.out_dir = Some(dir.clone());
            }
            let outcome = run_experiment(&cfg)?;
            if !cli.quiet {
                writeln!(out, "config_hash {}", outcome.config_hash).map_err(io)?;
                writeln!(out, "c_min {}", g(outcome.c_min)).map_err(io)?;
            }
            writeln!(out, "N,mean,stderr").map_err(io)?;
            for p in &outcome.curve.points {
                writeln!(out, "{},{},{}", p.n, g(p.mean), g(p.stderr)).map_err(io)?;
            }
            Ok(0)
        }
        Command::Hardbench { d, s, k, epsilon, cap, horizon, episodes, diagnose } => {
            let seed = cli.seed.unwrap_or(0);
            let inst = build_hard_instance(*d, *s, *k, *epsilon, *cap, seed)?;
            let mdp = inst.to_mdp(*horizon)?;
            let s1 = (*s - 1) as f64;
            writeln!(out, "feature_dimension {}", mdp.dim()).map_err(io)?;
            writeln!(out, "kl_bound {}", g(8.0 * epsilon * epsilon * s1 * s1)).map_err(io)?;
            if !cli.quiet {
                writeln!(out, "sparsity {}", mdp.sparsity()).map_err(io)?;
                writeln!(out, "menu_sizes {:?}", mdp.features().menu_sizes()).map_err(io)?;
                writeln!(out, "clamped_actions {}", inst.clamped_actions().len()).map_err(io)?;
                writeln!(out, "optimal_value {}", g(inst.optimal_value(*horizon))).map_err(io)?;
                writeln!(out, "valid {}", validate_mdp(&mdp).is_valid()).map_err(io)?;
            }
            if let Some(dir) = &cli.out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("hard_instance.json"), inst.to_json(*horizon)?)?;
            }
            if *diagnose {
                let n = episodes.unwrap_or(*d).max(1);
                let mut rng = stream_from_seed(seed);
                let opts = RunOptions { keep_trajectories: true };
                let run = run_baseline(&mdp, BaselineKind::UniformRandom, n, &BaselineParams::default(), &mut rng, opts)?;
                let mut diag = hard_run_diagnostics(&run.trajectories, &inst, n);
                writeln!(out, "tau {}", diag.tau).map_err(io)?;
                writeln!(out, "event_d {}", diag.event_d).map_err(io)?;
                writeln!(out, "visitation_sum {}", g(diag.visitation_sum)).map_err(io)?;
                writeln!(out, "uniform_regret {}", g(run.cumulative_regret())).map_err(io)?;
                if z_tilde_candidates(&inst).is_empty() {
                    writeln!(out, "kl skipped: no alternative direction for d = {d}, s = {s}").map_err(io)?;
                } else {
                    let z = select_z_tilde(&inst, &diag.visits)?;
                    let alt = build_alternative_instance(&inst, &z)?;
                    let report = stepwise_kl(&inst, &alt, std::slice::from_ref(&diag.visits))?;
                    writeln!(out, "kl_total {}", g(report.total)).map_err(io)?;
                    writeln!(out, "kl_within_bound {}", report.within_bound()).map_err(io)?;
                    diag.kl = Some(report);
                }
                if let Some(dir) = &cli.out {
                    fs::write(dir.join("diagnostics.json"), serde_json::to_string_pretty(&diag)?)?;
                }
            }
            Ok(0)
        }
        Command::Lasso { data, lambda, tolerance, max_sweeps } => {
            let ds = RegressionDataset::from_csv(fs::File::open(data)?)?;
            let cfg = LassoConfig { lambda: *lambda, tolerance: *tolerance, max_sweeps: *max_sweeps, ..LassoConfig::default() };
            let fit = lasso_fit(&ds, &cfg)?;
            for w in &fit.weights {
                writeln!(out, "{}", g(*w)).map_err(io)?;
            }
            if !cli.quiet {
                writeln!(out, "objective {}", g(fit.objective)).map_err(io)?;
                writeln!(out, "converged {}", fit.converged).map_err(io)?;
                writeln!(out, "sweeps {}", fit.sweeps).map_err(io)?;
            }
            Ok(0)
        }
        Command::Slope { curve } => {
            let c = RegretCurve::from_csv(fs::File::open(curve)?)?;
            let fit = fit_regret_slope(&c)?;
            for n in &fit.excluded {
                writeln!(err, "warning: grid point N = {n} has nonpositive mean regret and was excluded")
                    .map_err(io)?;
            }
            writeln!(out, "slope {:.4} ± {:.4}", fit.slope, fit.half_width).map_err(io)?;
            if !cli.quiet {
                writeln!(out, "slope_exact {}", g(fit.slope)).map_err(io)?;
                writeln!(out, "half_width {}", g(fit.half_width)).map_err(io)?;
                writeln!(out, "intercept {}", g(fit.intercept)).map_err(io)?;
                writeln!(out, "points {}", fit.used).map_err(io)?;
            }
            Ok(0)
        }
        Command::Re { matrix, s, budget } => {
            let m = matrix_from_csv(fs::File::open(matrix)?)?;
            let mut rng = stream_from_seed(cli.seed.unwrap_or(0));
            let iv = restricted_eigenvalue_estimate(&m, *s, *budget, &mut rng)?;
            writeln!(out, "lower {}", g(iv.lower)).map_err(io)?;
            writeln!(out, "upper {}", g(iv.upper)).map_err(io)?;
            Ok(0)
        }
    }
}
