//! Online agents over the episode protocol: explore-then-commit fitted-Q
//! iteration with a Lasso (or ridge) regressor, and simple baselines.
//!
//! Regret is exact: every episode contributes `V*_1(x_1) - V^π_1(x_1)` for the
//! policy actually executed, evaluated by backward induction.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dp::{optimal_values, policy_values};
use crate::error::{invalid, Result};
use crate::fqi::{fitted_q_iteration, greedy_policy, partition_folds, WeightStack};
use crate::linmdp::{
    sample_episode_tagged, stream_from_seed, DeterministicPolicy, Phase, Policy, SparseLinearMdp,
    StationaryPolicy, Stream, Trajectory,
};
use crate::sparsereg::{regularization, LambdaMode, LassoConfig, Regressor, RidgeConfig};

/// How the exploration length is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum BudgetMode {
    /// `(2048 s² H⁴ N² log(2dH/δ) / C_min²)^{1/3}`.
    Oracle,
    /// `(512 H⁴ N² log(2dH/δ))^{1/3}`, free of `s` and `C_min`.
    Conservative,
    /// A caller-supplied length.
    Fixed { n1: usize },
    /// `coefficient * N^{2/3}`: the oracle rate with a hand-picked constant.
    Rate { coefficient: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationBudget {
    pub mode: BudgetMode,
    /// Exploration episodes, a positive multiple of `H` and at most `N`.
    pub n1: usize,
    /// Episodes per fold, `N₁ / H`.
    pub episodes_per_fold: usize,
    /// The unrounded formula value.
    pub raw: f64,
    /// Set when the formula exceeded `N` and `N₁` was cut down.
    pub capped: bool,
    pub total_episodes: usize,
    pub horizon: usize,
    pub d: usize,
    pub s: usize,
    pub c_min: f64,
    pub delta: f64,
}

/// Exploration length for a run of `n` episodes: the mode's formula rounded
/// up to a multiple of `horizon`, then capped at the largest multiple of
/// `horizon` not exceeding `n`.
pub fn choose_exploration_length(
    n: usize,
    horizon: usize,
    d: usize,
    s: usize,
    c_min: f64,
    delta: f64,
    mode: BudgetMode,
) -> Result<ExplorationBudget> {
    if n == 0 || horizon == 0 || d == 0 || s == 0 {
        return invalid("N, H, d and s must be positive");
    }
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta must lie in (0, 1), got {delta}"));
    }
    if !(c_min > 0.0) {
        return invalid(format!("C_min must be positive, got {c_min}"));
    }
    if n < horizon {
        return invalid(format!("N = {n} is smaller than the horizon {horizon}"));
    }
    let (nf, hf, sf) = (n as f64, horizon as f64, s as f64);
    let log_term = (2.0 * d as f64 * hf / delta).ln();
    let raw = match mode {
        BudgetMode::Oracle => {
            (2048.0 * sf * sf * hf.powi(4) * nf * nf * log_term / (c_min * c_min)).cbrt()
        }
        BudgetMode::Conservative => (512.0 * hf.powi(4) * nf * nf * log_term).cbrt(),
        BudgetMode::Fixed { n1 } => n1 as f64,
        BudgetMode::Rate { coefficient } => {
            if !(coefficient > 0.0) {
                return invalid("rate coefficient must be positive");
            }
            coefficient * nf.powf(2.0 / 3.0)
        }
    };
    let ceiling = n / horizon * horizon;
    let rounded = if raw >= ceiling as f64 {
        None
    } else {
        Some(((raw / hf).ceil() as usize).max(1) * horizon)
    };
    let (n1, capped) = match rounded {
        Some(v) if v <= ceiling => (v, false),
        _ => (ceiling, raw > ceiling as f64),
    };
    Ok(ExplorationBudget {
        mode,
        n1,
        episodes_per_fold: n1 / horizon,
        raw,
        capped,
        total_episodes: n,
        horizon,
        d,
        s,
        c_min,
        delta,
    })
}

/// Lasso settings whose penalty follows `mode` for this budget.
pub fn lasso_config_for(budget: &ExplorationBudget, mode: LambdaMode) -> LassoConfig {
    let lambda = regularization(
        mode,
        budget.horizon,
        budget.d,
        budget.delta,
        budget.episodes_per_fold * budget.horizon,
        budget.total_episodes,
    );
    LassoConfig { lambda, delta: budget.delta, ..LassoConfig::default() }
}

/// `2 (2048 log(2dH/δ) / C_min²)^{1/3} H^{4/3} s^{2/3} N^{2/3}`: twice the
/// high-probability regret bound, used as a sanity ceiling.
pub fn regret_ceiling(n: usize, horizon: usize, d: usize, s: usize, c_min: f64, delta: f64) -> f64 {
    let hf = horizon as f64;
    let log_term = (2.0 * d as f64 * hf / delta).ln();
    2.0 * (2048.0 * log_term / (c_min * c_min)).cbrt()
        * hf.powf(4.0 / 3.0)
        * (s as f64).powf(2.0 / 3.0)
        * (n as f64).powf(2.0 / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub phase: Phase,
    pub initial_state: usize,
    pub episode_regret: f64,
    pub cumulative_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub episodes: Vec<EpisodeRecord>,
    pub weights: Option<WeightStack>,
    pub n: usize,
    pub n1: usize,
    pub episodes_per_fold: usize,
    pub seed: u64,
    /// False when some step's regression hit its sweep cap.
    pub converged: bool,
    pub config_hash: Option<String>,
    /// Full trajectories, kept only when asked for.
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
}

impl RunRecord {
    pub fn cumulative_regret(&self) -> f64 {
        self.episodes.last().map_or(0.0, |e| e.cumulative_regret)
    }

    pub fn phase_regret(&self, phase: Phase) -> f64 {
        self.episodes.iter().filter(|e| e.phase == phase).map(|e| e.episode_regret).sum()
    }

    pub fn phase_count(&self, phase: Phase) -> usize {
        self.episodes.iter().filter(|e| e.phase == phase).count()
    }

    /// `episode, phase, initial_state, episode_regret, cumulative_regret`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["episode", "phase", "initial_state", "episode_regret", "cumulative_regret"])?;
        for e in &self.episodes {
            w.write_record([
                (e.episode + 1).to_string(),
                e.phase.to_string(),
                e.initial_state.to_string(),
                format!("{:.17e}", e.episode_regret),
                format!("{:.17e}", e.cumulative_regret),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run-wide switches that do not change any numbers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub keep_trajectories: bool,
}

/// Accumulates exact per-episode regret while episodes are simulated.
struct Ledger<'a> {
    mdp: &'a SparseLinearMdp,
    optimal: Vec<f64>,
    records: Vec<EpisodeRecord>,
    trajectories: Vec<Trajectory>,
    keep: bool,
    total: f64,
}

impl<'a> Ledger<'a> {
    fn new(mdp: &'a SparseLinearMdp, n: usize, keep: bool) -> Self {
        Self {
            mdp,
            optimal: optimal_values(mdp).values[0].clone(),
            records: Vec::with_capacity(n),
            trajectories: Vec::new(),
            keep,
            total: 0.0,
        }
    }

    /// Simulates `count` episodes under `policy` and books their regret.
    fn play(
        &mut self,
        policy: &impl Policy,
        count: usize,
        phase: Phase,
        rng: &mut Stream,
    ) -> Result<Vec<Trajectory>> {
        let values = policy_values(self.mdp, policy)?.values[0].clone();
        let mut fresh = Vec::new();
        for _ in 0..count {
            let episode = self.records.len();
            let traj = sample_episode_tagged(self.mdp, policy, rng, episode, phase)?;
            let x1 = traj.initial_state();
            let regret = self.optimal[x1] - values[x1];
            self.total += regret;
            self.records.push(EpisodeRecord {
                episode,
                phase,
                initial_state: x1,
                episode_regret: regret,
                cumulative_regret: self.total,
            });
            if phase == Phase::Explore {
                fresh.push(traj.clone());
            }
            if self.keep {
                self.trajectories.push(traj);
            }
        }
        Ok(fresh)
    }
}

/// Explore with `pi_e` for `budget.n1` episodes, fit by backward regression,
/// then play the frozen greedy policy for the remaining episodes.
pub fn explore_then_commit(
    mdp: &SparseLinearMdp,
    pi_e: &StationaryPolicy,
    n: usize,
    budget: &ExplorationBudget,
    regressor: &impl Regressor,
    rng: &mut Stream,
    opts: RunOptions,
) -> Result<RunRecord> {
    if budget.n1 > n || budget.n1 == 0 || budget.n1 % mdp.horizon() != 0 {
        return invalid(format!(
            "exploration length {} must be a positive multiple of H = {} and at most N = {n}",
            budget.n1,
            mdp.horizon()
        ));
    }
    let mut ledger = Ledger::new(mdp, n, opts.keep_trajectories);
    let explored = ledger.play(pi_e, budget.n1, Phase::Explore, rng)?;
    let folds = partition_folds(explored, mdp.horizon())?;
    let view = mdp.learner_view();
    let weights = fitted_q_iteration(&folds, &view, regressor)?;
    let greedy = greedy_policy(&weights, &view);
    ledger.play(&greedy, n - budget.n1, Phase::Exploit, rng)?;
    Ok(RunRecord {
        converged: weights.all_converged(),
        episodes: ledger.records,
        weights: Some(weights),
        n,
        n1: budget.n1,
        episodes_per_fold: folds.episodes_per_fold,
        seed: 0,
        config_hash: None,
        trajectories: ledger.trajectories,
    })
}

/// Online Lasso fitted-Q-iteration, seeded.
pub fn run_online_lasso_fqi(
    mdp: &SparseLinearMdp,
    pi_e: &StationaryPolicy,
    n: usize,
    budget: &ExplorationBudget,
    cfg: &LassoConfig,
    seed: u64,
) -> Result<RunRecord> {
    let mut rng = stream_from_seed(seed);
    let mut record = explore_then_commit(mdp, pi_e, n, budget, cfg, &mut rng, RunOptions::default())?;
    record.seed = seed;
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    UniformRandom,
    RidgeFqiEtc,
    OracleOptimal,
}

impl std::str::FromStr for BaselineKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-random" => Ok(Self::UniformRandom),
            "ridge-fqi-etc" => Ok(Self::RidgeFqiEtc),
            "oracle-optimal" => Ok(Self::OracleOptimal),
            other => invalid(format!("unknown baseline {other:?}")),
        }
    }
}

/// Extra inputs some baselines need.
#[derive(Debug, Clone, Default)]
pub struct BaselineParams {
    /// Exploration policy and budget for the ridge arm.
    pub exploration: Option<(StationaryPolicy, ExplorationBudget)>,
    pub ridge_lambda: Option<f64>,
}

pub fn run_baseline(
    mdp: &SparseLinearMdp,
    kind: BaselineKind,
    n: usize,
    params: &BaselineParams,
    rng: &mut Stream,
    opts: RunOptions,
) -> Result<RunRecord> {
    match kind {
        BaselineKind::RidgeFqiEtc => {
            let (pi_e, budget) = params
                .exploration
                .as_ref()
                .ok_or_else(|| crate::error::Error::InvalidInput("ridge baseline needs an exploration policy and budget".into()))?;
            let ridge = RidgeConfig { lambda: params.ridge_lambda.unwrap_or(1e-3) };
            explore_then_commit(mdp, pi_e, n, budget, &ridge, rng, opts)
        }
        BaselineKind::UniformRandom => {
            let mut ledger = Ledger::new(mdp, n, opts.keep_trajectories);
            ledger.play(&StationaryPolicy::uniform(mdp), n, Phase::Baseline, rng)?;
            Ok(fixed_policy_record(ledger, n))
        }
        BaselineKind::OracleOptimal => {
            let opt = DeterministicPolicy { actions: optimal_values(mdp).argmax.unwrap_or_default() };
            let mut ledger = Ledger::new(mdp, n, opts.keep_trajectories);
            ledger.play(&opt, n, Phase::Baseline, rng)?;
            Ok(fixed_policy_record(ledger, n))
        }
    }
}

fn fixed_policy_record(ledger: Ledger<'_>, n: usize) -> RunRecord {
    RunRecord {
        episodes: ledger.records,
        weights: None,
        n,
        n1: 0,
        episodes_per_fold: 0,
        seed: 0,
        converged: true,
        config_hash: None,
        trajectories: ledger.trajectories,
    }
}
