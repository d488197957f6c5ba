//! Finite episodic MDPs whose transition kernel factors through a sparse set
//! of feature coordinates, plus trajectory simulation.
//!
//! States are indexed `0..num_states`. Every state carries its own action menu,
//! so action `a` at state `x` is the `a`-th entry of that menu. Steps inside an
//! episode are 0-based: step `h` here is step `h + 1` in the usual 1-based
//! notation.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Tolerance used for the factorization and row-sum checks.
pub const FACTOR_TOL: f64 = 1e-9;
/// Tolerance used for the initial distribution and policy rows.
pub const DIST_TOL: f64 = 1e-12;

/// The random stream type used everywhere in the crate.
pub type Stream = ChaCha8Rng;

/// Creates a stream from a plain seed.
pub fn stream_from_seed(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per state-action feature vectors of a common dimension.
///
/// Every stored vector has length `dim` and sup-norm at most one; both are
/// enforced at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dim: usize,
    rows: Vec<Vec<Vec<f64>>>,
}

impl FeatureMap {
    /// `rows[x][a]` is the feature vector of action `a` at state `x`.
    pub fn new(dim: usize, rows: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if dim == 0 {
            return invalid("feature dimension must be positive");
        }
        for (x, menu) in rows.iter().enumerate() {
            for (a, phi) in menu.iter().enumerate() {
                if phi.len() != dim {
                    return Err(Error::Dimension(format!(
                        "feature vector at (state {x}, action {a}) has length {} but d = {dim}",
                        phi.len()
                    )));
                }
                let norm = phi.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                if !(norm <= 1.0) {
                    return Err(Error::FeatureNorm { state: x, action: a, norm });
                }
            }
        }
        Ok(Self { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    /// Number of actions available at `state`.
    pub fn menu_size(&self, state: usize) -> usize {
        self.rows[state].len()
    }

    pub fn menu_sizes(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    pub fn phi(&self, state: usize, action: usize) -> &[f64] {
        &self.rows[state][action]
    }

    pub fn rows(&self) -> &[Vec<Vec<f64>>] {
        &self.rows
    }

    /// `φ(x, a)ᵀ w`.
    pub fn dot(&self, state: usize, action: usize, w: &[f64]) -> f64 {
        dot(self.phi(state, action), w)
    }

    /// Iterates over all `(state, action)` pairs in state-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(x, menu)| (0..menu.len()).map(move |a| (x, a)))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Indicator features for a tabular MDP with a uniform action count.
///
/// `d = num_states * num_actions` and `φ(x, a) = e_{x * num_actions + a}`.
pub fn build_tabular_feature_map(num_states: usize, num_actions: usize) -> Result<FeatureMap> {
    if num_states == 0 || num_actions == 0 {
        return invalid("tabular feature map needs at least one state and one action");
    }
    let dim = num_states
        .checked_mul(num_actions)
        .ok_or_else(|| Error::InvalidInput("feature dimension overflows usize".into()))?;
    // the dense table alone would need dim^2 entries
    if dim.checked_mul(dim).is_none() {
        return invalid("feature dimension too large for a dense table");
    }
    let rows = (0..num_states)
        .map(|x| {
            (0..num_actions)
                .map(|a| {
                    let mut phi = vec![0.0; dim];
                    phi[x * num_actions + a] = 1.0;
                    phi
                })
                .collect()
        })
        .collect();
    FeatureMap::new(dim, rows)
}

/// Everything needed to assemble a [`SparseLinearMdp`]. No semantic checks
/// happen at assembly; run [`validate_mdp`] for those.
#[derive(Debug, Clone)]
pub struct MdpParts {
    pub horizon: usize,
    pub sparsity: usize,
    pub features: FeatureMap,
    pub active_set: Vec<usize>,
    /// `factors[i][x']` is `ψ_{active_set[i]}(x')`.
    pub factors: Vec<Vec<f64>>,
    /// `rewards[x][a]`.
    pub rewards: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    /// Materialized kernel `transitions[x][a][x']`. When `None` it is derived
    /// from the factorization (with the clamp policy on `clamped` pairs).
    pub transitions: Option<Vec<Vec<Vec<f64>>>>,
    /// Pairs whose stored transition row is the clamped version of the
    /// factored row instead of the factored row itself.
    pub clamped: Option<Vec<Vec<bool>>>,
}

/// A finite episodic MDP with a sparse linear transition kernel
/// `P(x'|x,a) = Σ_{k∈K} φ_k(x,a) ψ_k(x')`.
///
/// The kernel is kept both factored and materialized; the materialized table is
/// what the simulator samples from and what dynamic programming uses.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLinearMdp {
    horizon: usize,
    sparsity: usize,
    features: FeatureMap,
    active_set: Vec<usize>,
    factors: Vec<Vec<f64>>,
    rewards: Vec<Vec<f64>>,
    initial: Vec<f64>,
    transitions: Vec<Vec<Vec<f64>>>,
    clamped: Vec<Vec<bool>>,
}

/// Clamp each entry to `[0, 1]` and renormalize the row to unit mass.
pub fn clamp_row(row: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = row.iter().map(|p| p.clamp(0.0, 1.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total > 0.0 {
        clipped.iter().map(|p| p / total).collect()
    } else {
        clipped
    }
}

impl SparseLinearMdp {
    /// Assembles an instance after checking that all tables have consistent
    /// shapes.
    pub fn from_parts(parts: MdpParts) -> Result<Self> {
        let MdpParts {
            horizon,
            sparsity,
            features,
            active_set,
            factors,
            rewards,
            initial,
            transitions,
            clamped,
        } = parts;
        let num_states = features.num_states();
        if horizon == 0 {
            return invalid("horizon must be positive");
        }
        if num_states == 0 {
            return invalid("an MDP needs at least one state");
        }
        if initial.len() != num_states {
            return Err(Error::Dimension(format!(
                "initial distribution has {} entries for {num_states} states",
                initial.len()
            )));
        }
        if factors.len() != active_set.len() {
            return Err(Error::Dimension(format!(
                "{} factor rows for an active set of size {}",
                factors.len(),
                active_set.len()
            )));
        }
        if let Some(row) = factors.iter().find(|row| row.len() != num_states) {
            return Err(Error::Dimension(format!(
                "factor row has {} entries for {num_states} states",
                row.len()
            )));
        }
        if let Some(&k) = active_set.iter().find(|&&k| k >= features.dim()) {
            return Err(Error::Dimension(format!(
                "active coordinate {k} outside feature dimension {}",
                features.dim()
            )));
        }
        let menus = features.menu_sizes();
        check_pair_table("rewards", &rewards, &menus)?;
        let clamped = match clamped {
            Some(c) => {
                check_pair_table("clamp flags", &c, &menus)?;
                c
            }
            None => menus.iter().map(|&m| vec![false; m]).collect(),
        };
        let transitions = match transitions {
            Some(t) => {
                check_pair_table("transitions", &t, &menus)?;
                if let Some(row) = t.iter().flatten().find(|row| row.len() != num_states) {
                    return Err(Error::Dimension(format!(
                        "transition row has {} entries for {num_states} states",
                        row.len()
                    )));
                }
                t
            }
            None => (0..num_states)
                .map(|x| {
                    (0..menus[x])
                        .map(|a| {
                            let row = factored_row(&features, &active_set, &factors, x, a);
                            if clamped[x][a] {
                                clamp_row(&row)
                            } else {
                                row
                            }
                        })
                        .collect()
                })
                .collect(),
        };
        Ok(Self {
            horizon,
            sparsity,
            features,
            active_set,
            factors,
            rewards,
            initial,
            transitions,
            clamped,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Declared sparsity `s`.
    pub fn sparsity(&self) -> usize {
        self.sparsity
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn num_states(&self) -> usize {
        self.features.num_states()
    }

    pub fn menu_size(&self, state: usize) -> usize {
        self.features.menu_size(state)
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn active_set(&self) -> &[usize] {
        &self.active_set
    }

    pub fn factors(&self) -> &[Vec<f64>] {
        &self.factors
    }

    pub fn rewards(&self) -> &[Vec<f64>] {
        &self.rewards
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.rewards[state][action]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        &self.transitions[state][action]
    }

    pub fn transitions(&self) -> &[Vec<Vec<f64>>] {
        &self.transitions
    }

    pub fn is_clamped(&self, state: usize, action: usize) -> bool {
        self.clamped[state][action]
    }

    /// `Σ_{k∈K} φ_k(x,a) ψ_k(·)` straight from the factorization.
    pub fn factored_row(&self, state: usize, action: usize) -> Vec<f64> {
        factored_row(&self.features, &self.active_set, &self.factors, state, action)
    }

    /// The part of the model a learner is allowed to see: features, rewards
    /// and menus, but not the kernel.
    pub fn learner_view(&self) -> LearnerView<'_> {
        LearnerView {
            features: &self.features,
            rewards: &self.rewards,
            horizon: self.horizon,
        }
    }

    /// Returns a copy with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return invalid("horizon must be positive");
        }
        let mut out = self.clone();
        out.horizon = horizon;
        Ok(out)
    }

    /// Returns a copy with a different initial distribution.
    pub fn with_initial(&self, initial: Vec<f64>) -> Result<Self> {
        if initial.len() != self.num_states() {
            return Err(Error::Dimension("initial distribution length".into()));
        }
        let mut out = self.clone();
        out.initial = initial;
        Ok(out)
    }

    pub fn to_record(&self) -> InstanceRecord {
        let any_clamped = self.clamped.iter().flatten().any(|&c| c);
        InstanceRecord {
            d: self.dim(),
            s: self.sparsity,
            horizon: self.horizon,
            states: self.num_states(),
            actions_per_state: self.features.menu_sizes(),
            phi: self.features.rows().iter().flatten().cloned().collect(),
            psi: self.factors.clone(),
            rewards: self.rewards.clone(),
            xi0: self.initial.clone(),
            active_set: self.active_set.clone(),
            clamped_pairs: any_clamped.then(|| {
                self.features
                    .pairs()
                    .filter(|&(x, a)| self.clamped[x][a])
                    .map(|(x, a)| [x, a])
                    .collect()
            }),
        }
    }

    pub fn from_record(rec: InstanceRecord) -> Result<Self> {
        if rec.actions_per_state.len() != rec.states {
            return Err(Error::Dimension("actions_per_state length differs from states".into()));
        }
        let total: usize = rec.actions_per_state.iter().sum();
        if rec.phi.len() != total {
            return Err(Error::Dimension(format!(
                "{} phi rows for {total} state-action pairs",
                rec.phi.len()
            )));
        }
        let mut it = rec.phi.into_iter();
        let rows: Vec<Vec<Vec<f64>>> = rec
            .actions_per_state
            .iter()
            .map(|&m| it.by_ref().take(m).collect())
            .collect();
        let features = FeatureMap::new(rec.d, rows)?;
        let clamped = match rec.clamped_pairs {
            None => None,
            Some(pairs) => {
                let mut flags: Vec<Vec<bool>> =
                    rec.actions_per_state.iter().map(|&m| vec![false; m]).collect();
                for [x, a] in pairs {
                    let slot = flags
                        .get_mut(x)
                        .and_then(|r| r.get_mut(a))
                        .ok_or_else(|| Error::Dimension(format!("clamped pair ({x}, {a})")))?;
                    *slot = true;
                }
                Some(flags)
            }
        };
        Self::from_parts(MdpParts {
            horizon: rec.horizon,
            sparsity: rec.s,
            features,
            active_set: rec.active_set,
            factors: rec.psi,
            rewards: rec.rewards,
            initial: rec.xi0,
            transitions: None,
            clamped,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_record())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_record(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

fn check_pair_table<T>(what: &str, table: &[Vec<T>], menus: &[usize]) -> Result<()> {
    if table.len() != menus.len() || table.iter().zip(menus).any(|(row, &m)| row.len() != m) {
        return Err(Error::Dimension(format!("{what} table does not match the action menus")));
    }
    Ok(())
}

fn factored_row(
    features: &FeatureMap,
    active: &[usize],
    factors: &[Vec<f64>],
    state: usize,
    action: usize,
) -> Vec<f64> {
    let phi = features.phi(state, action);
    let num_states = features.num_states();
    let mut row = vec![0.0; num_states];
    for (&k, psi) in active.iter().zip(factors) {
        let weight = phi[k];
        if weight == 0.0 {
            continue;
        }
        for (p, &v) in row.iter_mut().zip(psi) {
            *p += weight * v;
        }
    }
    row
}

/// On-disk instance format. Floats are written in shortest round-trip form, so
/// a save/load cycle is lossless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub d: usize,
    pub s: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub states: usize,
    pub actions_per_state: Vec<usize>,
    /// Dense feature rows in state-major pair order.
    pub phi: Vec<Vec<f64>>,
    /// Factor rows, one per active coordinate, in `active_set` order.
    pub psi: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<f64>>,
    pub xi0: Vec<f64>,
    pub active_set: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamped_pairs: Option<Vec<[usize; 2]>>,
}

/// Read-only view handed to learning agents.
#[derive(Debug, Clone, Copy)]
pub struct LearnerView<'a> {
    pub features: &'a FeatureMap,
    pub rewards: &'a [Vec<f64>],
    pub horizon: usize,
}

impl LearnerView<'_> {
    pub fn num_states(&self) -> usize {
        self.features.num_states()
    }

    /// `Q_w(x, a) = r(x, a) + φ(x, a)ᵀ w`.
    pub fn q_value(&self, state: usize, action: usize, w: &[f64]) -> f64 {
        self.rewards[state][action] + self.features.dot(state, action, w)
    }

    /// `max_a Q_w(x, a)` together with its lowest-index argmax.
    pub fn best_action(&self, state: usize, w: &[f64]) -> (usize, f64) {
        argmax((0..self.features.menu_size(state)).map(|a| self.q_value(state, a, w)))
    }
}

/// Lowest-index argmax of a nonempty sequence.
pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// One broken invariant, with its location.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyMenu { state: usize },
    FeatureSupNorm { state: usize, action: usize, norm: f64 },
    Reward { state: usize, action: usize, value: f64 },
    TransitionRange { state: usize, action: usize, next: usize, value: f64 },
    RowSum { state: usize, action: usize, sum: f64 },
    FactorRowSum { state: usize, action: usize, sum: f64 },
    FactorRange { state: usize, action: usize, next: usize, value: f64 },
    FactorMismatch { state: usize, action: usize, next: usize, stored: f64, factored: f64 },
    InitialSum { sum: f64 },
    InitialNegative { state: usize, value: f64 },
    Sparsity { active: usize, declared: usize },
    DuplicateActive { coordinate: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        use Violation::*;
        match self {
            EmptyMenu { state } => write!(f, "state {state}: empty action menu"),
            FeatureSupNorm { state, action, norm } => {
                write!(f, "({state}, {action}): feature sup-norm {norm} > 1")
            }
            Reward { state, action, value } => {
                write!(f, "({state}, {action}): reward {value} outside [0, 1]")
            }
            TransitionRange { state, action, next, value } => {
                write!(f, "({state}, {action}) -> {next}: probability {value} outside [0, 1]")
            }
            RowSum { state, action, sum } => {
                write!(f, "({state}, {action}): transition row sums to {sum}")
            }
            FactorRowSum { state, action, sum } => {
                write!(f, "({state}, {action}): factored row sums to {sum}")
            }
            FactorRange { state, action, next, value } => {
                write!(f, "({state}, {action}) -> {next}: factored probability {value} outside [0, 1]")
            }
            FactorMismatch { state, action, next, stored, factored } => write!(
                f,
                "({state}, {action}) -> {next}: stored {stored} differs from factored {factored}"
            ),
            InitialSum { sum } => write!(f, "initial distribution sums to {sum}"),
            InitialNegative { state, value } => {
                write!(f, "initial distribution has {value} at state {state}")
            }
            Sparsity { active, declared } => {
                write!(f, "active set has {active} coordinates, declared sparsity {declared}")
            }
            DuplicateActive { coordinate } => {
                write!(f, "coordinate {coordinate} appears twice in the active set")
            }
        }
    }
}

/// Result of [`validate_mdp`]; empty iff every invariant holds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, pred: impl Fn(&Violation) -> bool) -> usize {
        self.violations.iter().filter(|v| pred(v)).count()
    }
}

/// Checks every structural invariant of a sparse linear MDP and lists what is
/// broken. Pairs flagged as clamped are checked as probability rows but are
/// exempt from the factorization checks.
pub fn validate_mdp(mdp: &SparseLinearMdp) -> ValidationReport {
    let mut out = Vec::new();
    let n = mdp.num_states();

    let mut seen = std::collections::BTreeSet::new();
    for &k in mdp.active_set() {
        if !seen.insert(k) {
            out.push(Violation::DuplicateActive { coordinate: k });
        }
    }
    if seen.len() > mdp.sparsity() {
        out.push(Violation::Sparsity { active: seen.len(), declared: mdp.sparsity() });
    }

    let sum: f64 = mdp.initial().iter().sum();
    if (sum - 1.0).abs() > DIST_TOL {
        out.push(Violation::InitialSum { sum });
    }
    for (x, &p) in mdp.initial().iter().enumerate() {
        if p < 0.0 {
            out.push(Violation::InitialNegative { state: x, value: p });
        }
    }

    for x in 0..n {
        if mdp.menu_size(x) == 0 {
            out.push(Violation::EmptyMenu { state: x });
        }
        for a in 0..mdp.menu_size(x) {
            let norm = mdp.features().phi(x, a).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if norm > 1.0 {
                out.push(Violation::FeatureSupNorm { state: x, action: a, norm });
            }
            let r = mdp.reward(x, a);
            if !(0.0..=1.0).contains(&r) {
                out.push(Violation::Reward { state: x, action: a, value: r });
            }
            let stored = mdp.transition_row(x, a);
            for (next, &p) in stored.iter().enumerate() {
                if !(-FACTOR_TOL..=1.0 + FACTOR_TOL).contains(&p) {
                    out.push(Violation::TransitionRange { state: x, action: a, next, value: p });
                }
            }
            let stored_sum: f64 = stored.iter().sum();
            if (stored_sum - 1.0).abs() > FACTOR_TOL {
                out.push(Violation::RowSum { state: x, action: a, sum: stored_sum });
            }
            if mdp.is_clamped(x, a) {
                continue;
            }
            let factored = mdp.factored_row(x, a);
            let factored_sum: f64 = factored.iter().sum();
            if (factored_sum - 1.0).abs() > FACTOR_TOL {
                out.push(Violation::FactorRowSum { state: x, action: a, sum: factored_sum });
            }
            for (next, (&p, &q)) in stored.iter().zip(&factored).enumerate() {
                if !(-FACTOR_TOL..=1.0 + FACTOR_TOL).contains(&q) {
                    out.push(Violation::FactorRange { state: x, action: a, next, value: q });
                }
                if (p - q).abs() > FACTOR_TOL {
                    out.push(Violation::FactorMismatch {
                        state: x,
                        action: a,
                        next,
                        stored: p,
                        factored: q,
                    });
                }
            }
        }
    }
    ValidationReport { violations: out }
}

// ---------------------------------------------------------------------------
// Random instances
// ---------------------------------------------------------------------------

/// Knobs for [`make_random_sparse_mdp_with`] beyond the required sizes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RandomMdpOptions {
    /// Fill the inactive coordinates of φ with uniform draws from `[-1, 1]`.
    /// They carry no transition information but make the regression problem
    /// genuinely high-dimensional.
    #[serde(default)]
    pub distractors: bool,
}

/// Random sparse linear MDP with a uniform action count.
///
/// `s` anchor distributions `ψ_k` are drawn from a flat Dirichlet; each pair
/// gets convex weights over the anchors in the active coordinates of φ and
/// zeros elsewhere. When `s == d == num_states * num_actions` the weights are
/// one-hot and the result is a random tabular MDP under indicator features.
pub fn make_random_sparse_mdp(
    num_states: usize,
    num_actions: usize,
    d: usize,
    s: usize,
    horizon: usize,
    seed: u64,
) -> Result<SparseLinearMdp> {
    make_random_sparse_mdp_with(num_states, num_actions, d, s, horizon, seed, RandomMdpOptions::default())
}

pub fn make_random_sparse_mdp_with(
    num_states: usize,
    num_actions: usize,
    d: usize,
    s: usize,
    horizon: usize,
    seed: u64,
    opts: RandomMdpOptions,
) -> Result<SparseLinearMdp> {
    if num_states == 0 || num_actions == 0 || horizon == 0 {
        return invalid("states, actions and horizon must be positive");
    }
    if s == 0 || s > d {
        return invalid(format!("infeasible sparsity: need 1 <= s <= d, got s = {s}, d = {d}"));
    }
    let mut rng = stream_from_seed(seed);
    let tabular = s == d && d == num_states * num_actions;

    let active_set: Vec<usize> = if tabular {
        (0..d).collect()
    } else {
        let mut chosen = rand::seq::index::sample(&mut rng, d, s).into_vec();
        chosen.sort_unstable();
        chosen
    };
    let factors: Vec<Vec<f64>> = (0..s).map(|_| dirichlet(&mut rng, num_states)).collect();

    let rows: Vec<Vec<Vec<f64>>> = (0..num_states)
        .map(|x| {
            (0..num_actions)
                .map(|a| {
                    let mut phi = vec![0.0; d];
                    if opts.distractors {
                        for v in phi.iter_mut() {
                            *v = rng.gen_range(-1.0..=1.0);
                        }
                        for &k in &active_set {
                            phi[k] = 0.0;
                        }
                    }
                    if tabular {
                        phi[x * num_actions + a] = 1.0;
                    } else {
                        let weights = dirichlet(&mut rng, s);
                        for (&k, w) in active_set.iter().zip(weights) {
                            phi[k] = w;
                        }
                    }
                    phi
                })
                .collect()
        })
        .collect();
    let rewards = (0..num_states)
        .map(|_| (0..num_actions).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let initial = dirichlet(&mut rng, num_states);
    SparseLinearMdp::from_parts(MdpParts {
        horizon,
        sparsity: s,
        features: FeatureMap::new(d, rows)?,
        active_set,
        factors,
        rewards,
        initial,
        transitions: None,
        clamped: None,
    })
}

/// Flat Dirichlet draw via normalized exponentials.
fn dirichlet(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

// ---------------------------------------------------------------------------
// Policies and simulation
// ---------------------------------------------------------------------------

/// What a policy does at one `(step, state)`.
#[derive(Debug, Clone, Copy)]
pub enum ActionChoice<'a> {
    Deterministic(usize),
    Distribution(&'a [f64]),
}

impl ActionChoice<'_> {
    /// Probability of `action` under this choice.
    pub fn prob(&self, action: usize) -> f64 {
        match *self {
            ActionChoice::Deterministic(a) => f64::from(u8::from(a == action)),
            ActionChoice::Distribution(p) => p.get(action).copied().unwrap_or(0.0),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        match *self {
            ActionChoice::Deterministic(a) => a,
            ActionChoice::Distribution(p) => sample_index(p, rng),
        }
    }
}

/// Anything that maps `(step, state)` to an action choice. Returns `None` where
/// the policy is undefined.
pub trait Policy {
    fn choice(&self, step: usize, state: usize) -> Option<ActionChoice<'_>>;
}

/// A stationary randomized policy. An empty row marks a state where the
/// policy is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    rows: Vec<Vec<f64>>,
}

impl StationaryPolicy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (x, row) in rows.iter().enumerate() {
            if row.is_empty() {
                continue;
            }
            if let Some(p) = row.iter().find(|p| !(**p >= 0.0)) {
                return invalid(format!("policy row {x} has entry {p}"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > DIST_TOL {
                return invalid(format!("policy row {x} sums to {sum}"));
            }
        }
        Ok(Self { rows })
    }

    /// Uniform over each state's menu.
    pub fn uniform(mdp: &SparseLinearMdp) -> Self {
        Self {
            rows: (0..mdp.num_states())
                .map(|x| {
                    let m = mdp.menu_size(x);
                    vec![1.0 / m as f64; m]
                })
                .collect(),
        }
    }

    /// Plays `actions[x]` deterministically.
    pub fn deterministic(mdp: &SparseLinearMdp, actions: &[usize]) -> Result<Self> {
        if actions.len() != mdp.num_states() {
            return Err(Error::Dimension("one action per state expected".into()));
        }
        let rows = actions
            .iter()
            .enumerate()
            .map(|(x, &a)| {
                let mut row = vec![0.0; mdp.menu_size(x)];
                *row.get_mut(a).ok_or_else(|| {
                    Error::InvalidInput(format!("action {a} not in the menu of state {x}"))
                })? = 1.0;
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    /// Convex combination `(1 - t) * self + t * other`.
    pub fn mix(&self, other: &Self, t: f64) -> Result<Self> {
        if self.rows.len() != other.rows.len()
            || self.rows.iter().zip(&other.rows).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::Dimension("policies have different shapes".into()));
        }
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (1.0 - t) * p + t * q).collect())
            .collect();
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.rows[state]
    }
}

impl Policy for StationaryPolicy {
    fn choice(&self, _step: usize, state: usize) -> Option<ActionChoice<'_>> {
        match self.rows.get(state) {
            Some(row) if !row.is_empty() => Some(ActionChoice::Distribution(row)),
            _ => None,
        }
    }
}

/// A nonstationary deterministic policy: `actions[h][x]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    pub actions: Vec<Vec<usize>>,
}

impl Policy for DeterministicPolicy {
    fn choice(&self, step: usize, state: usize) -> Option<ActionChoice<'_>> {
        self.actions
            .get(step)
            .and_then(|row| row.get(state))
            .map(|&a| ActionChoice::Deterministic(a))
    }
}

pub(crate) fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Explore,
    Exploit,
    Baseline,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Explore => "explore",
            Phase::Exploit => "exploit",
            Phase::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// One simulated episode of exactly `H` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub episode: usize,
    pub phase: Phase,
    pub steps: Vec<Transition>,
}

impl Trajectory {
    pub fn initial_state(&self) -> usize {
        self.steps[0].state
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|t| t.reward).sum()
    }
}

/// Simulates one episode: `x_1 ~ ξ₀`, `a_h ~ π(·|x_h)`, `x_{h+1} ~ P(·|x_h, a_h)`.
pub fn sample_episode(
    mdp: &SparseLinearMdp,
    policy: &impl Policy,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    sample_episode_tagged(mdp, policy, rng, 0, Phase::Baseline)
}

pub fn sample_episode_tagged(
    mdp: &SparseLinearMdp,
    policy: &impl Policy,
    rng: &mut impl Rng,
    episode: usize,
    phase: Phase,
) -> Result<Trajectory> {
    let mut state = sample_index(mdp.initial(), rng);
    let mut steps = Vec::with_capacity(mdp.horizon());
    for h in 0..mdp.horizon() {
        let choice = policy.choice(h, state).ok_or(Error::MissingPolicyRow(state))?;
        if let ActionChoice::Distribution(p) = choice {
            if p.len() != mdp.menu_size(state) {
                return Err(Error::MissingPolicyRow(state));
            }
        }
        let action = choice.sample(rng);
        if action >= mdp.menu_size(state) {
            return Err(Error::InvalidInput(format!(
                "policy chose action {action} outside the menu of state {state}"
            )));
        }
        let next_state = sample_index(mdp.transition_row(state, action), rng);
        steps.push(Transition { state, action, reward: mdp.reward(state, action), next_state });
        state = next_state;
    }
    Ok(Trajectory { episode, phase, steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_tabular(row0: [f64; 2]) -> SparseLinearMdp {
        let features = build_tabular_feature_map(2, 2).unwrap();
        let transitions = vec![
            vec![row0.to_vec(), vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.5, 0.5]],
        ];
        // identity factorization: ψ_{(x,a)}(x') = P(x'|x,a)
        let factors: Vec<Vec<f64>> = transitions.iter().flatten().cloned().collect();
        SparseLinearMdp::from_parts(MdpParts {
            horizon: 3,
            sparsity: 4,
            features,
            active_set: (0..4).collect(),
            factors,
            rewards: vec![vec![0.0, 1.0], vec![0.5, 0.0]],
            initial: vec![1.0, 0.0],
            transitions: Some(transitions),
            clamped: None,
        })
        .unwrap()
    }

    #[test]
    fn tabular_identity_is_valid() {
        let mdp = two_state_tabular([0.3, 0.7]);
        assert!(validate_mdp(&mdp).is_valid(), "{:?}", validate_mdp(&mdp));
    }

    #[test]
    fn short_row_is_reported() {
        let mut mdp = two_state_tabular([0.3, 0.7]);
        mdp.transitions[0][0] = vec![0.2, 0.7];
        let report = validate_mdp(&mdp);
        assert_eq!(report.count(|v| matches!(v, Violation::RowSum { .. })), 1);
    }

    #[test]
    fn oversized_active_set_is_reported() {
        let mut mdp = two_state_tabular([0.3, 0.7]);
        mdp.sparsity = 3;
        let report = validate_mdp(&mdp);
        assert_eq!(
            report.violations,
            vec![Violation::Sparsity { active: 4, declared: 3 }]
        );
    }

    #[test]
    fn tabular_feature_map_shapes() {
        let fm = build_tabular_feature_map(2, 2).unwrap();
        assert_eq!(fm.dim(), 4);
        assert_eq!(fm.phi(0, 1), &[0.0, 1.0, 0.0, 0.0]);
        let one = build_tabular_feature_map(1, 1).unwrap();
        assert_eq!(one.dim(), 1);
        assert_eq!(one.phi(0, 0), &[1.0]);
        assert!(build_tabular_feature_map(0, 3).is_err());
        assert!(build_tabular_feature_map(usize::MAX, 2).is_err());
    }

    #[test]
    fn feature_norm_rejected() {
        let err = FeatureMap::new(2, vec![vec![vec![0.5, 1.5]]]).unwrap_err();
        assert!(matches!(err, Error::FeatureNorm { .. }));
    }

    #[test]
    fn random_instance_is_valid_and_deterministic() {
        let a = make_random_sparse_mdp(4, 3, 50, 3, 3, 7).unwrap();
        assert!(validate_mdp(&a).is_valid(), "{:?}", validate_mdp(&a));
        let b = make_random_sparse_mdp(4, 3, 50, 3, 3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert!(make_random_sparse_mdp(4, 3, 2, 3, 3, 7).is_err());
    }

    #[test]
    fn random_tabular_reduction() {
        let mdp = make_random_sparse_mdp(3, 2, 6, 6, 2, 11).unwrap();
        assert!(validate_mdp(&mdp).is_valid());
        for (x, a) in mdp.features().pairs() {
            let phi = mdp.features().phi(x, a);
            assert_eq!(phi.iter().filter(|v| **v != 0.0).count(), 1);
            assert_eq!(phi[x * 2 + a], 1.0);
        }
    }

    #[test]
    fn distractor_features_keep_kernel_valid() {
        let opts = RandomMdpOptions { distractors: true };
        let mdp = make_random_sparse_mdp_with(5, 3, 20, 3, 3, 1, opts).unwrap();
        assert!(validate_mdp(&mdp).is_valid());
        let nonzero = mdp.features().phi(0, 0).iter().filter(|v| **v != 0.0).count();
        assert!(nonzero > 3);
    }

    #[test]
    fn deterministic_episode_follows_unique_path() {
        let mdp = two_state_tabular([0.0, 1.0]);
        let policy = StationaryPolicy::deterministic(&mdp, &[0, 0]).unwrap();
        let mut rng = stream_from_seed(3);
        let traj = sample_episode(&mdp, &policy, &mut rng).unwrap();
        let states: Vec<usize> = traj.steps.iter().map(|t| t.state).collect();
        assert_eq!(states, vec![0, 1, 0]);
        assert_eq!(traj.steps.len(), 3);
        assert_eq!(traj.total_reward(), 0.0 + 0.5 + 0.0);
    }

    #[test]
    fn missing_policy_row_is_error() {
        let mdp = two_state_tabular([0.0, 1.0]);
        let policy = StationaryPolicy::new(vec![vec![1.0, 0.0], vec![]]).unwrap();
        let mut rng = stream_from_seed(3);
        let err = sample_episode(&mdp, &policy, &mut rng).unwrap_err();
        assert!(matches!(err, Error::MissingPolicyRow(1)));
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let mdp = make_random_sparse_mdp(5, 2, 12, 3, 4, 99).unwrap();
        let back = SparseLinearMdp::from_json(&mdp.to_json().unwrap()).unwrap();
        assert_eq!(mdp, back);
    }

    #[test]
    fn empirical_transition_frequencies_match_kernel() {
        // 10^5 single-step episodes from state 0 under action 0; binomial
        // standard error bound at three sigma.
        let mdp = two_state_tabular([0.3, 0.7]).with_horizon(1).unwrap();
        let policy = StationaryPolicy::deterministic(&mdp, &[0, 0]).unwrap();
        let mut rng = stream_from_seed(5);
        let n = 100_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let t = sample_episode(&mdp, &policy, &mut rng).unwrap();
            if t.steps[0].next_state == 0 {
                hits += 1;
            }
        }
        let p = 0.3;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 3.0 * se);
    }
}
