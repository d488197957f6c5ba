//! Replicate sweeps over a grid of episode counts, regret aggregation, CSV
//! output and log-log slope fitting.
//!
//! Every `(N, replicate)` cell draws from its own ChaCha8 stream: the key is
//! the master seed and the stream id is `N · 2²⁰ + replicate`, so any cell can
//! be rerun alone and no two cells share randomness.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{
    choose_exploration_length, explore_then_commit, lasso_config_for, regret_ceiling, run_baseline,
    BaselineKind, BaselineParams, BudgetMode, ExplorationBudget, RunOptions, RunRecord,
};
use crate::dp::expected_covariance;
use crate::error::{invalid, Error, Result};
use crate::hardbench::{build_hard_instance, canonical_epsilon, exploratory_policy_for};
use crate::linmdp::{
    make_random_sparse_mdp_with, RandomMdpOptions, SparseLinearMdp,
    StationaryPolicy, Stream,
};
use crate::sparsereg::LambdaMode;

/// Replicates per grid point must stay below this so stream ids never collide.
pub const MAX_REPLICATES: usize = 1 << 20;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// The random stream of one `(N, replicate)` cell.
pub fn replicate_stream(master_seed: u64, n: usize, replicate: usize) -> Stream {
    let mut rng = Stream::seed_from_u64(master_seed);
    rng.set_stream(((n as u64) << 20) | replicate as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InstanceSpec {
    RandomSparse {
        states: usize,
        actions: usize,
        d: usize,
        s: usize,
        horizon: usize,
        #[serde(default)]
        distractors: bool,
        #[serde(default)]
        seed: u64,
    },
    Hard {
        d: usize,
        s: usize,
        k: usize,
        /// Defaults to `1/(8s)`.
        #[serde(default)]
        epsilon: Option<f64>,
        #[serde(default = "default_cap")]
        action_cap: usize,
        horizon: usize,
        #[serde(default)]
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

fn default_cap() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AgentSpec {
    LassoFqi,
    Baseline {
        baseline: BaselineKind,
        #[serde(default)]
        ridge_lambda: Option<f64>,
    },
}

/// Overrides for the Lasso solver; the penalty defaults to the budget's.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoSettings {
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
}

fn default_tolerance() -> f64 {
    1e-8
}

fn default_max_sweeps() -> usize {
    10_000
}

impl Default for LassoSettings {
    fn default() -> Self {
        Self { lambda: None, tolerance: default_tolerance(), max_sweeps: default_max_sweeps() }
    }
}

fn default_delta() -> f64 {
    0.1
}

fn default_budget() -> BudgetMode {
    BudgetMode::Oracle
}

/// A full sweep description. See `examples/configs/` for JSON samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub agent: AgentSpec,
    pub grid: Vec<usize>,
    pub replicates: usize,
    pub master_seed: u64,
    #[serde(default = "default_budget")]
    pub budget: BudgetMode,
    #[serde(default)]
    pub lambda_mode: LambdaMode,
    #[serde(default)]
    pub lasso: LassoSettings,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Defaults to `σ_min(Σ^{π_e})` of the exploration policy.
    #[serde(default)]
    pub c_min: Option<f64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return invalid("the N grid is empty");
        }
        if self.replicates == 0 || self.replicates >= MAX_REPLICATES {
            return invalid(format!("replicate count must lie in 1..{MAX_REPLICATES}"));
        }
        if self.grid.iter().any(|&n| n == 0 || n as u64 >= 1 << 44) {
            return invalid("grid points must lie in 1..2^44");
        }
        Ok(())
    }

    /// SHA-256 of the JSON form, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Materializes the instance and the exploration policy of a config.
pub fn instantiate(spec: &InstanceSpec) -> Result<(SparseLinearMdp, StationaryPolicy)> {
    match spec {
        InstanceSpec::RandomSparse { states, actions, d, s, horizon, distractors, seed } => {
            let mdp = make_random_sparse_mdp_with(
                *states,
                *actions,
                *d,
                *s,
                *horizon,
                *seed,
                RandomMdpOptions { distractors: *distractors },
            )?;
            let pi = StationaryPolicy::uniform(&mdp);
            Ok((mdp, pi))
        }
        InstanceSpec::Hard { d, s, k, epsilon, action_cap, horizon, seed } => {
            let eps = epsilon.unwrap_or_else(|| canonical_epsilon(*s));
            let hard = build_hard_instance(*d, *s, *k, eps, *action_cap, *seed)?;
            let mdp = hard.to_mdp(*horizon)?;
            let pi = if *k >= 1 { exploratory_policy_for(&hard)? } else { StationaryPolicy::uniform(&mdp) };
            Ok((mdp, pi))
        }
        InstanceSpec::File { path } => {
            let mdp = SparseLinearMdp::load(path)?;
            let pi = StationaryPolicy::uniform(&mdp);
            Ok((mdp, pi))
        }
    }
}

/// One executed `(N, replicate)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub n: usize,
    pub replicate: usize,
    pub cumulative_regret: f64,
    pub n1: usize,
    pub capped: bool,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(replicates)`; 0 for one replicate.
    pub stderr: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    pub points: Vec<CurvePoint>,
}

impl CurvePoint {
    pub fn from_values(n: usize, values: Vec<f64>) -> Self {
        let r = values.len() as f64;
        let mean = values.iter().sum::<f64>() / r;
        let stderr = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
            (var / r).sqrt()
        } else {
            0.0
        };
        Self { n, mean, stderr, values }
    }
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

impl RegretCurve {
    /// `N, replicate, cumulative_regret`, one row per cell.
    pub fn write_curve_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["N", "replicate", "cumulative_regret"])?;
        for p in &self.points {
            for (r, v) in p.values.iter().enumerate() {
                w.write_record([p.n.to_string(), r.to_string(), fmt17(*v)])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `N, mean, stderr`, one row per grid point.
    pub fn write_summary_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["N", "mean", "stderr"])?;
        for p in &self.points {
            w.write_record([p.n.to_string(), fmt17(p.mean), fmt17(p.stderr)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads either a per-replicate curve (`N, replicate, cumulative_regret`)
    /// or a summary (`N, mean[, stderr]`).
    pub fn from_csv(reader: impl Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let n_col = col("N").ok_or_else(|| Error::InvalidInput("curve CSV needs an N column".into()))?;
        let per_replicate = col("cumulative_regret");
        let mean_col = col("mean");
        let value_col = per_replicate.or(mean_col).ok_or_else(|| {
            Error::InvalidInput("curve CSV needs a cumulative_regret or mean column".into())
        })?;
        let mut grouped: Vec<(usize, Vec<f64>)> = Vec::new();
        for row in r.records() {
            let row = row?;
            let parse_err = |what: &str| Error::InvalidInput(format!("bad {what} in curve CSV"));
            let n: usize = row.get(n_col).and_then(|v| v.trim().parse().ok()).ok_or_else(|| parse_err("N"))?;
            let v: f64 =
                row.get(value_col).and_then(|v| v.trim().parse().ok()).ok_or_else(|| parse_err("value"))?;
            match grouped.iter_mut().find(|(m, _)| *m == n) {
                Some((_, vals)) => vals.push(v),
                None => grouped.push((n, vec![v])),
            }
        }
        if per_replicate.is_none() && grouped.iter().any(|(_, v)| v.len() > 1) {
            return invalid("summary CSV repeats a grid point");
        }
        Ok(Self { points: grouped.into_iter().map(|(n, v)| CurvePoint::from_values(n, v)).collect() })
    }
}

/// Ordinary least squares of `log mean` on `log N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// `Z_95` times the standard error of the slope.
    pub half_width: f64,
    pub used: usize,
    /// Grid points left out because their mean was not positive.
    pub excluded: Vec<usize>,
}

pub fn fit_regret_slope(curve: &RegretCurve) -> Result<SlopeFit> {
    let mut excluded = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for p in &curve.points {
        if p.mean > 0.0 && p.mean.is_finite() && p.n > 0 {
            xs.push((p.n as f64).ln());
            ys.push(p.mean.ln());
        } else {
            excluded.push(p.n);
        }
    }
    let m = xs.len();
    if m < 3 {
        return Err(Error::SlopeFit(format!("{m} points with positive mean regret, need 3")));
    }
    let mf = m as f64;
    let xbar = xs.iter().sum::<f64>() / mf;
    let ybar = ys.iter().sum::<f64>() / mf;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::SlopeFit("all grid points share one N".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let se = (rss / (mf - 2.0) / sxx).sqrt();
    Ok(SlopeFit { slope, intercept, half_width: Z_95 * se, used: m, excluded })
}

/// What a sweep produced, in memory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutcome {
    pub curve: RegretCurve,
    pub runs: Vec<ReplicateResult>,
    /// `C_min` used for the budgets.
    pub c_min: f64,
    /// Regret ceiling per grid point (oracle-form bound with this `C_min`).
    pub ceilings: Vec<f64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub crate_version: String,
    pub c_min: f64,
    pub budgets: Vec<ExplorationBudget>,
    pub files: Vec<(String, String)>,
}

fn budget_for(config: &ExperimentConfig, mdp: &SparseLinearMdp, n: usize, c_min: f64) -> Result<ExplorationBudget> {
    choose_exploration_length(n, mdp.horizon(), mdp.dim(), mdp.sparsity(), c_min, config.delta, config.budget)
}

fn run_cell(
    config: &ExperimentConfig,
    mdp: &SparseLinearMdp,
    pi_e: &StationaryPolicy,
    budget: Option<&ExplorationBudget>,
    n: usize,
    replicate: usize,
) -> Result<RunRecord> {
    let mut rng = replicate_stream(config.master_seed, n, replicate);
    let opts = RunOptions::default();
    let need = || budget.copied().ok_or_else(|| Error::InvalidInput("this agent needs C_min; set c_min".into()));
    match &config.agent {
        AgentSpec::LassoFqi => {
            let budget = need()?;
            let mut cfg = lasso_config_for(&budget, config.lambda_mode);
            if let Some(l) = config.lasso.lambda {
                cfg.lambda = l;
            }
            cfg.tolerance = config.lasso.tolerance;
            cfg.max_sweeps = config.lasso.max_sweeps;
            explore_then_commit(mdp, pi_e, n, &budget, &cfg, &mut rng, opts)
        }
        AgentSpec::Baseline { baseline, ridge_lambda } => {
            let exploration = match baseline {
                BaselineKind::RidgeFqiEtc => Some((pi_e.clone(), need()?)),
                _ => None,
            };
            let params = BaselineParams { exploration, ridge_lambda: *ridge_lambda };
            run_baseline(mdp, *baseline, n, &params, &mut rng, opts)
        }
    }
}

/// Runs every `(N, replicate)` cell in parallel, aggregates, and writes
/// `curve.csv`, `summary.csv`, `runs.csv` and `manifest.json` when the config
/// names an output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let (mdp, pi_e) = instantiate(&config.instance)?;
    let c_min = match config.c_min {
        Some(c) => c,
        None => expected_covariance(&mdp, &pi_e)?.sigma_min,
    };
    let budgets: Vec<Option<ExplorationBudget>> = config
        .grid
        .iter()
        .map(|&n| if c_min > 0.0 { budget_for(config, &mdp, n, c_min).map(Some) } else { Ok(None) })
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize, usize)> = config
        .grid
        .iter()
        .enumerate()
        .flat_map(|(g, &n)| (0..config.replicates).map(move |r| (g, n, r)))
        .collect();
    let runs: Vec<ReplicateResult> = cells
        .par_iter()
        .map(|&(g, n, r)| {
            let rec = run_cell(config, &mdp, &pi_e, budgets[g].as_ref(), n, r)?;
            Ok(ReplicateResult {
                n,
                replicate: r,
                cumulative_regret: rec.cumulative_regret(),
                n1: rec.n1,
                capped: budgets[g].is_some_and(|b| b.capped) && rec.n1 > 0,
                converged: rec.converged,
            })
        })
        .collect::<Result<_>>()?;
    let curve = RegretCurve {
        points: config
            .grid
            .iter()
            .map(|&n| {
                let vals = runs.iter().filter(|r| r.n == n).map(|r| r.cumulative_regret).collect();
                CurvePoint::from_values(n, vals)
            })
            .collect(),
    };
    let ceilings = config
        .grid
        .iter()
        .map(|&n| {
            if c_min > 0.0 {
                regret_ceiling(n, mdp.horizon(), mdp.dim(), mdp.sparsity(), c_min, config.delta)
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let outcome = ExperimentOutcome { curve, runs, c_min, ceilings, config_hash: config.hash()? };
    if let Some(dir) = &config.out_dir {
        let budgets = budgets.into_iter().flatten().collect();
        write_outputs(config, &outcome, budgets, dir)?;
    }
    Ok(outcome)
}

fn write_runs_csv(runs: &[ReplicateResult], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N", "replicate", "cumulative_regret", "n1", "capped", "converged"])?;
    for r in runs {
        w.write_record([
            r.n.to_string(),
            r.replicate.to_string(),
            fmt17(r.cumulative_regret),
            r.n1.to_string(),
            r.capped.to_string(),
            r.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_outputs(
    config: &ExperimentConfig,
    outcome: &ExperimentOutcome,
    budgets: Vec<ExplorationBudget>,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut emit = |name: &str, bytes: Vec<u8>| -> Result<()> {
        fs::write(dir.join(name), &bytes)?;
        files.push((name.to_string(), sha256_hex(&bytes)));
        Ok(())
    };
    let mut buf = Vec::new();
    outcome.curve.write_curve_csv(&mut buf)?;
    emit("curve.csv", buf)?;
    let mut buf = Vec::new();
    outcome.curve.write_summary_csv(&mut buf)?;
    emit("summary.csv", buf)?;
    let mut buf = Vec::new();
    write_runs_csv(&outcome.runs, &mut buf)?;
    emit("runs.csv", buf)?;
    let manifest = Manifest {
        config: config.clone(),
        config_hash: outcome.config_hash.clone(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        c_min: outcome.c_min,
        budgets,
        files,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
