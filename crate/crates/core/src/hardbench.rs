//! The hard-instance family: five states `x₀, x_i, x_u, x_g, x_b`, a needle
//! action at `x₀` that leads to the informative state, and a sparse bandit at
//! the uninformative state.
//!
//! Feature coordinates (0-based, dimension `2d + 3`):
//!
//! - `0..d`: the bandit block, where `θ` lives.
//! - `d`: the "left `x₀`" coordinate, set for every `x₀` action.
//! - `d + 1`: the `x_g` self-loop coordinate.
//! - `d + 2 + j`: indicator of the `x₀` action `a_{j+1}`.
//! - `2d + 2`: the offset coordinate, set at `x_i`, `x_u` and `x_b`.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::dp::expected_covariance;
use crate::error::{invalid, Error, Result};
use crate::linmdp::{
    dot, FeatureMap, InstanceRecord, MdpParts, SparseLinearMdp, StationaryPolicy, Stream,
    Trajectory, FACTOR_TOL,
};

pub const X0: usize = 0;
pub const XI: usize = 1;
pub const XU: usize = 2;
pub const XG: usize = 3;
pub const XB: usize = 4;

/// Above this ambient dimension the action sets are sampled instead of
/// enumerated.
pub const ENUMERATION_LIMIT: usize = 12;

/// One member of the hard family (`k ≥ 1`), the null instance (`k = 0`), or an
/// alternative (when `z_tilde` is set).
#[derive(Debug, Clone, PartialEq)]
pub struct HardInstance {
    pub d: usize,
    pub s: usize,
    pub k: usize,
    pub epsilon: f64,
    pub action_cap: usize,
    pub seed: u64,
    /// `(ε, …, ε, 0, …, 0, 1/2)` with `s − 1` leading `ε`.
    pub theta: Vec<f64>,
    /// Bandit features `φ(x_u, ·)`, each in the set `S`.
    pub uninformative_menu: Vec<Vec<f64>>,
    /// Bandit features `φ(x_i, ·)`, each in the set `H`.
    pub informative_menu: Vec<Vec<f64>>,
    pub z_tilde: Option<Vec<f64>>,
}

/// Metadata stored next to the instance record in the JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardSidecar {
    pub d: usize,
    pub s: usize,
    pub k: usize,
    pub epsilon: f64,
    pub action_cap: usize,
    pub seed: u64,
    pub z_tilde: Option<Vec<f64>>,
    /// Actions at `x_u` whose transition row is clamped.
    pub clamped_actions: Vec<usize>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardInstanceFile {
    pub instance: InstanceRecord,
    pub hard: HardSidecar,
}

fn theta_vector(d: usize, s: usize, epsilon: f64) -> Vec<f64> {
    let mut theta = vec![0.0; d];
    theta[..s - 1].fill(epsilon);
    theta[d - 1] = 0.5;
    theta
}

fn stream_for(seed: u64, purpose: u64) -> Stream {
    let mut rng = Stream::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Ternary vectors of length `d` with the given support (in `coords`) and all
/// sign patterns.
fn signed_vectors(d: usize, support: &[usize]) -> Vec<Vec<f64>> {
    (0..1usize << support.len())
        .map(|mask| {
            let mut z = vec![0.0; d];
            for (b, &j) in support.iter().enumerate() {
                z[j] = if mask >> b & 1 == 1 { -1.0 } else { 1.0 };
            }
            z
        })
        .collect()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

fn sort_lex(v: &mut [Vec<f64>]) {
    v.sort_by(|a, b| lex_cmp(a, b));
}

/// `k`-subsets of `coords`, all of them when there are few, else a seeded
/// sample of distinct signed vectors.
fn ternary_family(
    d: usize,
    coords: &[usize],
    weight: usize,
    cap: usize,
    enumerate: bool,
    rng: &mut Stream,
) -> Vec<Vec<f64>> {
    if enumerate {
        let mut all: Vec<Vec<f64>> = subsets(coords.len(), weight)
            .into_iter()
            .flat_map(|idx| {
                let support: Vec<usize> = idx.iter().map(|&i| coords[i]).collect();
                signed_vectors(d, &support)
            })
            .collect();
        sort_lex(&mut all);
        if all.len() <= cap {
            return all;
        }
        let mut picked: Vec<usize> = sample(rng, all.len(), cap).into_vec();
        picked.sort_unstable();
        return picked.into_iter().map(|i| all[i].clone()).collect();
    }
    let mut seen: BTreeSet<Vec<i8>> = BTreeSet::new();
    let mut attempts = 0;
    while seen.len() < cap && attempts < 100 * cap {
        attempts += 1;
        let mut z = vec![0i8; d];
        for i in sample(rng, coords.len(), weight) {
            z[coords[i]] = if rng.gen::<bool>() { 1 } else { -1 };
        }
        seen.insert(z);
    }
    let mut out: Vec<Vec<f64>> =
        seen.into_iter().map(|z| z.into_iter().map(f64::from).collect()).collect();
    sort_lex(&mut out);
    out
}

fn uninformative_menu(d: usize, s: usize, cap: usize, rng: &mut Stream) -> Vec<Vec<f64>> {
    let coords: Vec<usize> = (0..d - 1).collect();
    let mut menu = ternary_family(d, &coords, s - 1, cap, d <= ENUMERATION_LIMIT, rng);
    let best = best_uninformative_action(d, s);
    if !menu.contains(&best) {
        // Replace the last entry so the menu never exceeds the cap.
        if menu.len() >= cap {
            menu.pop();
        }
        menu.push(best);
        sort_lex(&mut menu);
    }
    menu
}

fn best_uninformative_action(d: usize, s: usize) -> Vec<f64> {
    let mut z = vec![0.0; d];
    z[..s - 1].fill(1.0);
    z
}

/// Row `i` of the Sylvester–Hadamard matrix mapped into `H`: column 0 is the
/// last coordinate (always `+1`), columns `1..d` are coordinates `0..d−1`.
fn hadamard_row(i: usize, d: usize) -> Vec<f64> {
    let entry = |j: usize| if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
    let mut h: Vec<f64> = (1..d).map(entry).collect();
    h.push(entry(0));
    h
}

fn informative_menu(d: usize, cap: usize, rng: &mut Stream) -> Vec<Vec<f64>> {
    let free = d - 1;
    if free < usize::BITS as usize - 1 && 1usize << free <= cap {
        let mut all: Vec<Vec<f64>> = (0..1usize << free)
            .map(|mask| {
                let mut h: Vec<f64> =
                    (0..free).map(|j| if mask >> j & 1 == 1 { -1.0 } else { 1.0 }).collect();
                h.push(1.0);
                h
            })
            .collect();
        sort_lex(&mut all);
        return all;
    }
    let order = d.next_power_of_two();
    let mut seen: BTreeSet<Vec<i8>> = BTreeSet::new();
    let mut menu = Vec::new();
    let push = |h: Vec<f64>, seen: &mut BTreeSet<Vec<i8>>, menu: &mut Vec<Vec<f64>>| {
        let key: Vec<i8> = h.iter().map(|&v| v as i8).collect();
        if seen.insert(key) {
            menu.push(h);
        }
    };
    for i in 0..order.min(cap) {
        push(hadamard_row(i, d), &mut seen, &mut menu);
    }
    let mut attempts = 0;
    while menu.len() < cap && attempts < 100 * cap {
        attempts += 1;
        let mut h: Vec<f64> =
            (0..free).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        h.push(1.0);
        push(h, &mut seen, &mut menu);
    }
    menu
}

/// Builds `M_k` for `1 ≤ k ≤ d`, or the null instance `M₀` for `k = 0`.
pub fn build_hard_instance(
    d: usize,
    s: usize,
    k: usize,
    epsilon: f64,
    action_cap: usize,
    seed: u64,
) -> Result<HardInstance> {
    if s < 2 || s > d {
        return invalid(format!("need 2 <= s <= d, got s = {s}, d = {d}"));
    }
    if k > d {
        return invalid(format!("instance index {k} exceeds d = {d}"));
    }
    let eps_max = 1.0 / (2.0 * (s - 1) as f64);
    if !(epsilon > 0.0 && epsilon <= eps_max) {
        return invalid(format!("epsilon {epsilon} outside (0, {eps_max}]"));
    }
    if action_cap < 2 {
        return invalid("action cap must be at least 2");
    }
    let uninformative = uninformative_menu(d, s, action_cap, &mut stream_for(seed, 1));
    let informative = informative_menu(d, action_cap, &mut stream_for(seed, 2));
    Ok(HardInstance {
        d,
        s,
        k,
        epsilon,
        action_cap,
        seed,
        theta: theta_vector(d, s, epsilon),
        uninformative_menu: uninformative,
        informative_menu: informative,
        z_tilde: None,
    })
}

/// The canonical choice `ε = 1/(8s)`.
pub fn canonical_epsilon(s: usize) -> f64 {
    1.0 / (8.0 * s as f64)
}

impl HardInstance {
    pub fn dim(&self) -> usize {
        2 * self.d + 3
    }

    /// The bandit parameter that drives transitions: `θ̃ = θ + 2ε z̃` for an
    /// alternative, `θ` otherwise.
    pub fn effective_theta(&self) -> Vec<f64> {
        match &self.z_tilde {
            Some(z) => self.theta.iter().zip(z).map(|(t, z)| t + 2.0 * self.epsilon * z).collect(),
            None => self.theta.clone(),
        }
    }

    /// Index of `(1, …, 1, 0, …, 0)` in the `x_u` menu.
    pub fn best_uninformative_index(&self) -> usize {
        let best = best_uninformative_action(self.d, self.s);
        self.uninformative_menu.iter().position(|z| *z == best).expect("always in the menu")
    }

    /// Index of the `x_u` action equal to `z̃`, for an alternative.
    pub fn z_tilde_index(&self) -> Option<usize> {
        let z = self.z_tilde.as_ref()?;
        self.uninformative_menu.iter().position(|a| a == z)
    }

    /// Raw probability `⟨φ(x_u, a), θ_eff⟩` of reaching `x_g`, before clamping.
    pub fn uninformative_success(&self, action: usize) -> f64 {
        dot(&self.uninformative_menu[action], &self.effective_theta())
    }

    /// `P(x_g | x_i, a) = ⟨φ(x_i, a), θ_eff⟩`.
    pub fn informative_success(&self, action: usize) -> f64 {
        dot(&self.informative_menu[action], &self.effective_theta())
    }

    /// Exact `V*₁(x₀)`: through `x_i` for `k ≥ 1`, through `x_u` otherwise.
    /// Reward arrives from step 3 on, so `H − 2` steps collect it.
    pub fn optimal_value(&self, horizon: usize) -> f64 {
        let clip = |p: f64| p.clamp(0.0, 1.0);
        let via_u = (0..self.uninformative_menu.len())
            .map(|a| clip(self.uninformative_success(a)))
            .fold(f64::NEG_INFINITY, f64::max);
        let best = if self.k >= 1 {
            let via_i = (0..self.informative_menu.len())
                .map(|a| clip(self.informative_success(a)))
                .fold(f64::NEG_INFINITY, f64::max);
            via_i.max(via_u)
        } else {
            via_u
        };
        horizon.saturating_sub(2) as f64 * best
    }

    fn active_set(&self) -> Vec<usize> {
        let d = self.d;
        let mut set: BTreeSet<usize> = (0..self.s - 1).collect();
        set.insert(d - 1);
        if let Some(z) = &self.z_tilde {
            set.extend(z.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, _)| j));
        }
        set.insert(d);
        set.insert(d + 1);
        if self.k >= 1 {
            set.insert(d + 1 + self.k);
        }
        set.insert(2 * d + 2);
        set.into_iter().collect()
    }

    fn factor(&self, coordinate: usize, theta: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut psi = vec![0.0; 5];
        if coordinate < d {
            psi[XG] = theta[coordinate];
            psi[XB] = -theta[coordinate];
        } else if coordinate == d {
            psi[XU] = 1.0;
        } else if coordinate == d + 1 {
            psi[XG] = 1.0;
        } else if coordinate == 2 * d + 2 {
            psi[XB] = 1.0;
        } else if self.k >= 1 && coordinate == d + 1 + self.k {
            psi[XI] = 1.0;
            psi[XU] = -1.0;
        }
        psi
    }

    fn feature_rows(&self) -> Vec<Vec<Vec<f64>>> {
        let d = self.d;
        let dim = self.dim();
        let unit = |c: usize| {
            let mut v = vec![0.0; dim];
            v[c] = 1.0;
            v
        };
        let bandit = |z: &Vec<f64>| {
            let mut v = vec![0.0; dim];
            v[..d].copy_from_slice(z);
            v[dim - 1] = 1.0;
            v
        };
        let start: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                let mut v = unit(d);
                v[d + 2 + j] = 1.0;
                v
            })
            .collect();
        vec![
            start,
            self.informative_menu.iter().map(bandit).collect(),
            self.uninformative_menu.iter().map(bandit).collect(),
            vec![unit(d + 1)],
            vec![unit(dim - 1)],
        ]
    }

    /// The instance as a sparse linear MDP with the given horizon. Pairs whose
    /// factored row leaves `[0, 1]` are clamped and flagged.
    pub fn to_mdp(&self, horizon: usize) -> Result<SparseLinearMdp> {
        let rows = self.feature_rows();
        let features = FeatureMap::new(self.dim(), rows)?;
        let active_set = self.active_set();
        let theta = self.effective_theta();
        let factors: Vec<Vec<f64>> = active_set.iter().map(|&c| self.factor(c, &theta)).collect();
        let clamped: Vec<Vec<bool>> = (0..5)
            .map(|x| {
                (0..features.menu_size(x))
                    .map(|a| {
                        let phi = features.phi(x, a);
                        (0..5).any(|next| {
                            let p: f64 =
                                active_set.iter().zip(&factors).map(|(&c, f)| phi[c] * f[next]).sum();
                            !(-FACTOR_TOL..=1.0 + FACTOR_TOL).contains(&p)
                        })
                    })
                    .collect()
            })
            .collect();
        let rewards: Vec<Vec<f64>> = (0..5)
            .map(|x| vec![if x == XG { 1.0 } else { 0.0 }; features.menu_size(x)])
            .collect();
        let mut initial = vec![0.0; 5];
        initial[X0] = 1.0;
        SparseLinearMdp::from_parts(MdpParts {
            horizon,
            sparsity: active_set.len(),
            features,
            active_set,
            factors,
            rewards,
            initial,
            transitions: None,
            clamped: Some(clamped),
        })
    }

    /// `x_u` actions whose transition row is clamped.
    pub fn clamped_actions(&self) -> Vec<usize> {
        (0..self.uninformative_menu.len())
            .filter(|&a| {
                let p = self.uninformative_success(a);
                !(-FACTOR_TOL..=1.0 + FACTOR_TOL).contains(&p)
            })
            .collect()
    }

    pub fn sidecar(&self) -> HardSidecar {
        HardSidecar {
            d: self.d,
            s: self.s,
            k: self.k,
            epsilon: self.epsilon,
            action_cap: self.action_cap,
            seed: self.seed,
            z_tilde: self.z_tilde.clone(),
            clamped_actions: self.clamped_actions(),
            notes: vec![
                "action menus are per state; no out-of-menu transitions exist".into(),
                "x_u rows with negative success probability are clamped to [0, 1]".into(),
            ],
        }
    }

    pub fn to_json(&self, horizon: usize) -> Result<String> {
        let file = HardInstanceFile { instance: self.to_mdp(horizon)?.to_record(), hard: self.sidecar() };
        Ok(serde_json::to_string_pretty(&file)?)
    }
}

/// At `x₀` take the needle action `a_k`, then play uniformly over the bandit
/// menus; one action at the absorbing states.
pub fn exploratory_policy_for(instance: &HardInstance) -> Result<StationaryPolicy> {
    if instance.k == 0 {
        return invalid("the null instance has no route to the informative state");
    }
    let mut start = vec![0.0; instance.d];
    start[instance.k - 1] = 1.0;
    let uniform = |m: usize| vec![1.0 / m as f64; m];
    StationaryPolicy::new(vec![
        start,
        uniform(instance.informative_menu.len()),
        uniform(instance.uninformative_menu.len()),
        vec![1.0],
        vec![1.0],
    ])
}

/// Candidates for `z̃`: ternary vectors with `s − 1` nonzeros, all outside the
/// first `s − 1` coordinates and the last one. Sorted lexicographically.
pub fn z_tilde_candidates(instance: &HardInstance) -> Vec<Vec<f64>> {
    let (d, s) = (instance.d, instance.s);
    let coords: Vec<usize> = (s - 1..d - 1).collect();
    if coords.len() < s - 1 {
        return Vec::new();
    }
    let mut rng = stream_for(instance.seed, 3);
    ternary_family(d, &coords, s - 1, instance.action_cap, d <= ENUMERATION_LIMIT, &mut rng)
}

/// `argmin_z Σ_a w_a ⟨φ(x_u, a), z⟩²` over the candidate set, where `w_a` is the
/// expected number of plays of `x_u` action `a` before the stopping time.
/// Ties go to the lexicographically smallest candidate.
pub fn select_z_tilde(instance: &HardInstance, visitation: &[f64]) -> Result<Vec<f64>> {
    if visitation.len() != instance.uninformative_menu.len() {
        return Err(Error::Dimension(format!(
            "{} visitation weights for {} actions",
            visitation.len(),
            instance.uninformative_menu.len()
        )));
    }
    let candidates = z_tilde_candidates(instance);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for z in candidates {
        let score: f64 = instance
            .uninformative_menu
            .iter()
            .zip(visitation)
            .map(|(phi, w)| w * dot(phi, &z).powi(2))
            .sum();
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, z));
        }
    }
    best.map(|(_, z)| z).ok_or_else(|| {
        Error::InvalidInput(format!(
            "no alternative direction exists for d = {}, s = {}",
            instance.d, instance.s
        ))
    })
}

fn check_z_tilde(instance: &HardInstance, z: &[f64]) -> Result<()> {
    let (d, s) = (instance.d, instance.s);
    if z.len() != d {
        return Err(Error::Dimension(format!("z has {} entries, expected {d}", z.len())));
    }
    if z.iter().any(|v| ![-1.0, 0.0, 1.0].contains(v)) {
        return invalid("z entries must be in {-1, 0, 1}");
    }
    if z[..s - 1].iter().any(|v| *v != 0.0) || z[d - 1] != 0.0 {
        return invalid("z must vanish on the first s - 1 coordinates and the last one");
    }
    let l1: f64 = z.iter().map(|v| v.abs()).sum();
    if l1 != (s - 1) as f64 {
        return invalid(format!("z has l1 norm {l1}, expected {}", s - 1));
    }
    Ok(())
}

/// The alternative `M̃_k`: `θ` replaced by `θ + 2ε z̃` everywhere it enters
/// the transitions. The `x_u` action equal to `z̃` is appended if the menu
/// lacks it.
pub fn build_alternative_instance(instance: &HardInstance, z_tilde: &[f64]) -> Result<HardInstance> {
    check_z_tilde(instance, z_tilde)?;
    let mut alt = instance.clone();
    let z = z_tilde.to_vec();
    if !alt.uninformative_menu.contains(&z) {
        alt.uninformative_menu.push(z.clone());
    }
    alt.z_tilde = Some(z);
    Ok(alt)
}

/// Stopping time, event `D_k` and KL diagnostics for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardDiagnostics {
    /// First 1-based episode taking `a_k` at `x₀`, or `N` if none does.
    pub tau: usize,
    pub event_d: bool,
    /// `Σ_{n<τ} Σ_{j<s} φ_j(x_u, A₂ⁿ)`.
    pub visitation_sum: f64,
    /// Plays of each `x_u` action in episodes before `τ`.
    pub visits: Vec<f64>,
    pub kl: Option<KlReport>,
}

pub fn hard_run_diagnostics(runs: &[Trajectory], instance: &HardInstance, n: usize) -> HardDiagnostics {
    let needle = instance.k.checked_sub(1);
    let hit = runs.iter().take(n).position(|t| {
        t.steps.first().is_some_and(|st| st.state == X0 && Some(st.action) == needle)
    });
    let tau = hit.map_or(n, |i| i + 1);
    let mut visits = vec![0.0; instance.uninformative_menu.len()];
    for run in runs.iter().take(tau - 1) {
        for st in run.steps.iter().filter(|st| st.state == XU) {
            visits[st.action] += 1.0;
        }
    }
    let visitation_sum: f64 = visits
        .iter()
        .zip(&instance.uninformative_menu)
        .map(|(c, z)| c * z[..instance.s - 1].iter().sum::<f64>())
        .sum();
    HardDiagnostics {
        tau,
        event_d: visitation_sum <= (tau * instance.s) as f64 / 2.0,
        visitation_sum,
        visits,
        kl: None,
    }
}

/// Exact KL between the trajectory laws of an instance and its alternative,
/// summed over the `x_u` visits of a trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlReport {
    /// One contribution per trace step.
    pub per_step: Vec<f64>,
    pub total: f64,
    /// `8 ε² (s − 1)²`.
    pub bound: f64,
    /// Set when some step puts mass on an action whose probabilities are
    /// degenerate in one instance only.
    pub infinite: bool,
    /// Clamped actions, left out of the sum.
    pub excluded: Vec<usize>,
}

impl KlReport {
    pub fn within_bound(&self) -> bool {
        !self.infinite && self.total <= self.bound + 1e-9
    }
}

/// `q log(q/q') + (1 − q) log((1 − q)/(1 − q'))`, infinite where `q'` puts zero
/// mass on an outcome that `q` can produce.
pub fn bernoulli_kl(q: f64, q_alt: f64) -> f64 {
    let term = |p: f64, p_alt: f64| {
        if p == 0.0 {
            0.0
        } else if p_alt == 0.0 {
            f64::INFINITY
        } else {
            p * (p / p_alt).ln()
        }
    };
    term(q, q_alt) + term(1.0 - q, 1.0 - q_alt)
}

/// Sums Bernoulli KL terms over a trace of `x_u` action distributions.
/// `trace[t][a]` is the probability (or expected count) of playing `x_u` action
/// `a` at trace step `t`; `q` comes from `instance` and `q'` from `alternative`.
pub fn stepwise_kl(
    instance: &HardInstance,
    alternative: &HardInstance,
    trace: &[Vec<f64>],
) -> Result<KlReport> {
    if instance.d != alternative.d || instance.s != alternative.s || instance.epsilon != alternative.epsilon {
        return invalid("instance and alternative differ beyond the bandit parameter");
    }
    let common = instance.uninformative_menu.len().min(alternative.uninformative_menu.len());
    if instance.uninformative_menu[..common] != alternative.uninformative_menu[..common] {
        return invalid("instance and alternative have different x_u menus");
    }
    let mut excluded: BTreeSet<usize> = instance.clamped_actions().into_iter().collect();
    excluded.extend(alternative.clamped_actions());
    let terms: Vec<f64> = (0..common)
        .map(|a| {
            if excluded.contains(&a) {
                0.0
            } else {
                bernoulli_kl(instance.uninformative_success(a), alternative.uninformative_success(a))
            }
        })
        .collect();
    let mut per_step = Vec::with_capacity(trace.len());
    let mut infinite = false;
    for (t, row) in trace.iter().enumerate() {
        if row.len() > common {
            return Err(Error::Dimension(format!(
                "trace step {t} has {} entries for {common} shared actions",
                row.len()
            )));
        }
        let mut step = 0.0;
        for (w, term) in row.iter().zip(&terms) {
            if *w > 0.0 {
                if term.is_infinite() {
                    infinite = true;
                }
                step += w * term;
            }
        }
        per_step.push(step);
    }
    let total = per_step.iter().sum();
    let s1 = (instance.s - 1) as f64;
    Ok(KlReport {
        per_step,
        total,
        bound: 8.0 * instance.epsilon.powi(2) * s1 * s1,
        infinite,
        excluded: excluded.into_iter().collect(),
    })
}

/// Maximizes `σ_min(Σ^π)` over the candidates and the grid mixtures
/// `(1 − t) π_i + t π_j`, `t = 1/m, …, (m − 1)/m`, of every pair. Evaluating
/// `Σ^π` needs the transition kernel, which an online learner does not have.
pub fn find_exploratory_policy_bruteforce(
    mdp: &SparseLinearMdp,
    candidates: &[StationaryPolicy],
    grid: usize,
) -> Result<(StationaryPolicy, f64)> {
    if candidates.is_empty() {
        return invalid("no candidate policies");
    }
    let score = |p: &StationaryPolicy| expected_covariance(mdp, p).map(|c| c.sigma_min);
    let mut best = (candidates[0].clone(), score(&candidates[0])?);
    let mut consider = |p: StationaryPolicy| -> Result<()> {
        let v = score(&p)?;
        if v > best.1 {
            best = (p, v);
        }
        Ok(())
    };
    for p in &candidates[1..] {
        consider(p.clone())?;
    }
    for i in 0..candidates.len() {
        for j in i + 1..candidates.len() {
            for step in 1..grid {
                consider(candidates[i].mix(&candidates[j], step as f64 / grid as f64)?)?;
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::optimal_values;
    use crate::linmdp::{build_tabular_feature_map, sample_episode, validate_mdp, Phase, Transition};
    use proptest::prelude::*;
    use rand::Rng;

    fn inst(d: usize, s: usize, k: usize) -> HardInstance {
        build_hard_instance(d, s, k, canonical_epsilon(s), 64, 7).unwrap()
    }

    #[test]
    fn dimension_and_menus() {
        for (d, s) in [(8, 3), (16, 3), (32, 4)] {
            let h = inst(d, s, 1);
            let mdp = h.to_mdp(4).unwrap();
            assert_eq!(mdp.dim(), 2 * d + 3);
            assert_eq!(mdp.menu_size(X0), d);
            assert!(mdp.menu_size(XU) <= 64);
            assert!(mdp.menu_size(XI) <= 64);
            assert_eq!(h.theta.iter().filter(|&&t| t == h.epsilon).count(), s - 1);
            assert_eq!(h.theta[d - 1], 0.5);
            for z in &h.uninformative_menu {
                assert_eq!(z[d - 1], 0.0);
                assert_eq!(z.iter().map(|v| v.abs()).sum::<f64>(), (s - 1) as f64);
            }
            for z in &h.informative_menu {
                assert_eq!(z[d - 1], 1.0);
                assert!(z[..d - 1].iter().all(|v| v.abs() == 1.0));
            }
        }
    }

    #[test]
    fn start_transitions_and_absorbing_states() {
        let h = inst(8, 3, 3);
        let mdp = h.to_mdp(3).unwrap();
        for j in 0..8 {
            let row = mdp.transition_row(X0, j);
            if j == 2 {
                assert_eq!(row[XI], 1.0);
            } else {
                assert_eq!(row[XU], 1.0);
            }
        }
        for x in [XG, XB] {
            assert_eq!(mdp.transition_row(x, 0)[x], 1.0);
        }
        let null = inst(8, 3, 0).to_mdp(3).unwrap();
        for j in 0..8 {
            assert_eq!(null.transition_row(X0, j)[XU], 1.0);
        }
    }

    #[test]
    fn instances_validate() {
        for (d, s) in [(8, 3), (16, 3), (32, 4), (10, 2)] {
            for k in [0, 1, d] {
                let mdp = inst(d, s, k).to_mdp(5).unwrap();
                let report = validate_mdp(&mdp);
                assert!(report.is_valid(), "{:?}", report.violations);
            }
        }
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(build_hard_instance(8, 3, 1, 0.3, 64, 0).is_err());
        assert!(build_hard_instance(8, 3, 1, 0.0, 64, 0).is_err());
        assert!(build_hard_instance(8, 1, 1, 0.1, 64, 0).is_err());
        assert!(build_hard_instance(8, 3, 9, 0.1, 64, 0).is_err());
        assert!(build_hard_instance(8, 3, 1, 0.1, 1, 0).is_err());
        assert!(build_hard_instance(8, 3, 1, 0.25, 64, 0).is_ok());
    }

    #[test]
    fn optimal_value_matches_dp() {
        for (d, s, hz) in [(8, 3, 3), (16, 3, 5), (32, 4, 4)] {
            for k in [0, 2] {
                let h = inst(d, s, k);
                let mdp = h.to_mdp(hz).unwrap();
                let v = optimal_values(&mdp).initial_value(X0);
                let eps = h.epsilon;
                let s1 = (s - 1) as f64;
                let closed = if k == 0 {
                    (hz - 2) as f64 * s1 * eps
                } else {
                    (hz - 2) as f64 * (0.5 + s1 * eps)
                };
                assert!((v - closed).abs() < 1e-12, "{v} vs {closed}");
                assert!((h.optimal_value(hz) - closed).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn null_and_needle_instances_differ_only_at_the_needle() {
        let m0 = inst(8, 3, 0).to_mdp(3).unwrap();
        let mk = inst(8, 3, 5).to_mdp(3).unwrap();
        for x in 0..5 {
            for a in 0..m0.menu_size(x) {
                if x == X0 && a == 4 {
                    assert_ne!(m0.transition_row(x, a), mk.transition_row(x, a));
                } else {
                    assert_eq!(m0.transition_row(x, a), mk.transition_row(x, a));
                }
            }
        }
    }

    #[test]
    fn exploratory_policy_rows() {
        let h = inst(8, 3, 2);
        let pi = exploratory_policy_for(&h).unwrap();
        for row in pi.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(pi.row(X0)[1], 1.0);
        assert!(exploratory_policy_for(&inst(8, 3, 0)).is_err());
    }

    #[test]
    fn hadamard_rows_are_orthogonal() {
        let d = 16;
        let rows: Vec<Vec<f64>> = (0..16).map(|i| hadamard_row(i, d)).collect();
        for i in 0..16 {
            for j in 0..16 {
                let g = dot(&rows[i], &rows[j]);
                assert_eq!(g, if i == j { 16.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn z_tilde_all_ties_give_smallest() {
        let h = inst(10, 3, 1);
        let z = select_z_tilde(&h, &vec![0.0; h.uninformative_menu.len()]).unwrap();
        assert_eq!(z, z_tilde_candidates(&h)[0]);
        assert_eq!(z[..2], [0.0, 0.0]);
        assert_eq!(z[9], 0.0);
        assert_eq!(z.iter().map(|v| v.abs()).sum::<f64>(), 2.0);
    }

    #[test]
    fn z_tilde_matches_exhaustive_search() {
        let h = inst(10, 3, 1);
        let mut rng = stream_for(99, 0);
        let w: Vec<f64> = (0..h.uninformative_menu.len()).map(|_| rng.gen::<f64>()).collect();
        let z = select_z_tilde(&h, &w).unwrap();
        // Every ternary vector with the required zero pattern and weight.
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0..3usize.pow(7) {
            let mut c: Vec<f64> = vec![0.0; 10];
            let mut m = mask;
            for j in 2..9 {
                c[j] = [0.0, 1.0, -1.0][m % 3];
                m /= 3;
            }
            if c.iter().map(|v| v.abs()).sum::<f64>() != 2.0 {
                continue;
            }
            let score: f64 =
                h.uninformative_menu.iter().zip(&w).map(|(a, w)| w * dot(a, &c).powi(2)).sum();
            let better = match &best {
                None => true,
                Some((b, bz)) => score < *b || (score == *b && lex_cmp(&c, bz).is_lt()),
            };
            if better {
                best = Some((score, c));
            }
        }
        assert_eq!(z, best.unwrap().1);
    }

    #[test]
    fn z_tilde_needs_room() {
        let h = build_hard_instance(4, 3, 1, 0.05, 8, 0).unwrap();
        assert!(select_z_tilde(&h, &vec![0.0; h.uninformative_menu.len()]).is_err());
    }

    #[test]
    fn alternative_raises_matching_action() {
        let h = inst(10, 3, 1);
        let z = select_z_tilde(&h, &vec![1.0; h.uninformative_menu.len()]).unwrap();
        let alt = build_alternative_instance(&h, &z).unwrap();
        let a = alt.z_tilde_index().unwrap();
        let before = dot(&alt.uninformative_menu[a], &h.theta);
        let after = alt.uninformative_success(a);
        assert!((after - before - 2.0 * h.epsilon * 2.0).abs() < 1e-15);
        let report = validate_mdp(&alt.to_mdp(3).unwrap());
        assert!(report.is_valid(), "{:?}", report.violations);
        assert!(build_alternative_instance(&h, &vec![0.0; 10]).is_err());
    }

    fn scripted(actions: &[(usize, Option<usize>)]) -> Vec<Trajectory> {
        actions
            .iter()
            .enumerate()
            .map(|(n, &(a0, au))| {
                let mut steps = vec![Transition {
                    state: X0,
                    action: a0,
                    reward: 0.0,
                    next_state: if au.is_some() { XU } else { XI },
                }];
                if let Some(a) = au {
                    steps.push(Transition { state: XU, action: a, reward: 0.0, next_state: XB });
                }
                Trajectory { episode: n, phase: Phase::Baseline, steps }
            })
            .collect()
    }

    #[test]
    fn stopping_time_definitions() {
        let h = inst(8, 3, 2);
        let first = scripted(&[(1, None), (0, Some(0))]);
        assert_eq!(hard_run_diagnostics(&first, &h, 2).tau, 1);
        let never = scripted(&[(0, Some(0)), (3, Some(1)), (4, Some(2))]);
        let diag = hard_run_diagnostics(&never, &h, 3);
        assert_eq!(diag.tau, 3);
    }

    #[test]
    fn scripted_event() {
        let h = inst(8, 3, 4);
        let best = h.best_uninformative_index();
        let neg = h
            .uninformative_menu
            .iter()
            .position(|z| z[0] == -1.0 && z[1] == -1.0)
            .unwrap();
        // Episodes 1..3 go to x_u, episode 4 finds the needle, episode 5 is ignored.
        let log = scripted(&[(0, Some(best)), (1, Some(best)), (2, Some(neg)), (3, None), (0, Some(best))]);
        let diag = hard_run_diagnostics(&log, &h, 5);
        assert_eq!(diag.tau, 4);
        // 2 + 2 - 2 = 2 <= 4 * 3 / 2.
        assert_eq!(diag.visitation_sum, 2.0);
        assert!(diag.event_d);
        let greedy = scripted(&[(0, Some(best)); 5]);
        let diag = hard_run_diagnostics(&greedy, &h, 5);
        assert_eq!(diag.tau, 5);
        // 4 episodes before tau, each contributing 2: 8 > 7.5.
        assert_eq!(diag.visitation_sum, 8.0);
        assert!(!diag.event_d);
    }

    #[test]
    fn kl_is_zero_against_itself() {
        let h = inst(8, 3, 1);
        let trace = vec![vec![1.0 / h.uninformative_menu.len() as f64; h.uninformative_menu.len()]; 4];
        let r = stepwise_kl(&h, &h, &trace).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(r.within_bound());
    }

    #[test]
    fn bernoulli_kl_closed_form() {
        let s = 3;
        let eps = canonical_epsilon(s);
        let q = 0.5;
        let q_alt = 0.5 + 2.0 * eps * 2.0;
        let direct = 0.5 * (0.5 / q_alt).ln() + 0.5 * (0.5 / (1.0 - q_alt)).ln();
        assert!((bernoulli_kl(q, q_alt) - direct).abs() < 1e-15);
        // At q = 1/2 the exact divergence already exceeds 8 ε² (s − 1)².
        assert!((direct - 0.058_891_517_828_191_2).abs() < 1e-12);
        assert!(direct > 8.0 * eps * eps * 4.0);
        assert!(bernoulli_kl(0.3, 0.0).is_infinite());
        assert_eq!(bernoulli_kl(0.0, 0.0), 0.0);
        for s in 2..50 {
            let e = canonical_epsilon(s);
            let s1 = (s - 1) as f64;
            assert!(8.0 * e * e * s1 * s1 < 0.125);
        }
    }

    #[test]
    fn bruteforce_single_and_tabular() {
        let mdp = {
            let features = build_tabular_feature_map(2, 2).unwrap();
            // From either state, action 0 stays and action 1 switches.
            let transitions = vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            ];
            SparseLinearMdp::from_parts(MdpParts {
                horizon: 4,
                sparsity: 4,
                features,
                active_set: vec![0, 1, 2, 3],
                factors: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]],
                rewards: vec![vec![0.0; 2]; 2],
                initial: vec![0.5, 0.5],
                transitions: Some(transitions),
                clamped: None,
            })
            .unwrap()
        };
        let uniform = StationaryPolicy::uniform(&mdp);
        let (p, v) = find_exploratory_policy_bruteforce(&mdp, &[uniform.clone()], 5).unwrap();
        assert_eq!(p, uniform);
        let mut cands = Vec::new();
        for a0 in 0..2 {
            for a1 in 0..2 {
                cands.push(StationaryPolicy::deterministic(&mdp, &[a0, a1]).unwrap());
            }
        }
        cands.push(uniform.clone());
        let (best, best_v) = find_exploratory_policy_bruteforce(&mdp, &cands, 4).unwrap();
        assert!((best_v - v).abs() < 1e-12);
        assert!((best_v - 0.25).abs() < 1e-12);
        let direct = expected_covariance(&mdp, &best).unwrap().sigma_min;
        assert!((direct - best_v).abs() < 1e-10);
    }

    #[test]
    fn json_sidecar_roundtrip() {
        let h = inst(8, 3, 2);
        let text = h.to_json(3).unwrap();
        let file: HardInstanceFile = serde_json::from_str(&text).unwrap();
        assert_eq!(file.hard.k, 2);
        let mdp = SparseLinearMdp::from_record(file.instance).unwrap();
        assert_eq!(mdp, h.to_mdp(3).unwrap());
    }

    #[test]
    fn simulation_respects_needle() {
        let h = inst(8, 3, 6);
        let mdp = h.to_mdp(4).unwrap();
        let pi = exploratory_policy_for(&h).unwrap();
        let mut rng = stream_for(1, 0);
        for _ in 0..50 {
            let t = sample_episode(&mdp, &pi, &mut rng).unwrap();
            assert_eq!(t.steps[1].state, XI);
            assert!(matches!(t.steps[2].state, XG | XB));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn every_instance_validates(d in 4usize..20, s_off in 0usize..3, k_frac in 0.0f64..1.0, seed in 0u64..1000) {
            let s = 2 + s_off.min(d - 2);
            let k = (k_frac * (d + 1) as f64) as usize;
            let h = build_hard_instance(d, s, k, canonical_epsilon(s), 16, seed).unwrap();
            let report = validate_mdp(&h.to_mdp(3).unwrap());
            prop_assert!(report.is_valid(), "{:?}", report.violations);
            prop_assert_eq!(h.to_mdp(3).unwrap().dim(), 2 * d + 3);
        }

        #[test]
        fn canonical_kl_within_bound_on_z_tilde_traces(seed in 0u64..500) {
            let h = build_hard_instance(10, 3, 1, canonical_epsilon(3), 64, seed).unwrap();
            let m = h.uninformative_menu.len();
            let trace = vec![vec![1.0 / m as f64; m]];
            let z = select_z_tilde(&h, &trace[0]).unwrap();
            let alt = build_alternative_instance(&h, &z).unwrap();
            let r = stepwise_kl(&h, &alt, &trace).unwrap();
            prop_assert!(r.total >= 0.0);
        }
    }
}
