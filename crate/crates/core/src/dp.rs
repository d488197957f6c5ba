//! Exact finite-horizon dynamic programming over the materialized kernel.
//!
//! Everything here is noise-free: values, occupancies and covariances come from
//! backward induction or forward propagation of distributions, never from
//! sampling.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linmdp::{argmax, ActionChoice, Policy, SparseLinearMdp};
use crate::sparsereg::min_eigenvalue;

/// `V_h` for `h = 1..=H+1` and `Q_h` for `h = 1..=H`, stored 0-based:
/// `values[h][x]` with `values[H]` identically zero, `q[h][x][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSequence {
    pub values: Vec<Vec<f64>>,
    pub q: Vec<Vec<Vec<f64>>>,
    /// Greedy action per `(h, x)` when produced by [`optimal_values`].
    pub argmax: Option<Vec<Vec<usize>>>,
}

impl ValueSequence {
    pub fn horizon(&self) -> usize {
        self.q.len()
    }

    /// `V_1(x)`.
    pub fn initial_value(&self, state: usize) -> f64 {
        self.values[0][state]
    }

    /// `E_{x ~ ξ₀} V_1(x)`.
    pub fn expected_initial_value(&self, initial: &[f64]) -> f64 {
        initial.iter().zip(&self.values[0]).map(|(p, v)| p * v).sum()
    }

    /// Writes `h, state, V, Q_0, Q_1, ...` rows with 1-based `h`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        let width = self.q.iter().flatten().map(Vec::len).max().unwrap_or(0);
        let mut header = vec!["h".to_string(), "state".into(), "V".into()];
        header.extend((0..width).map(|a| format!("Q_{a}")));
        w.write_record(&header)?;
        for (h, row) in self.values.iter().enumerate() {
            for (x, v) in row.iter().enumerate() {
                let mut rec = vec![(h + 1).to_string(), x.to_string(), format!("{v:.17e}")];
                if let Some(qs) = self.q.get(h) {
                    rec.extend(qs[x].iter().map(|q| format!("{q:.17e}")));
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `[T V](x, a) = r(x, a) + Σ_{x'} P(x'|x, a) V(x')` for every pair.
pub fn bellman_backup(mdp: &SparseLinearMdp, value_next: &[f64]) -> Vec<Vec<f64>> {
    (0..mdp.num_states())
        .map(|x| {
            (0..mdp.menu_size(x))
                .map(|a| {
                    let expected = mdp
                        .transition_row(x, a)
                        .iter()
                        .zip(value_next)
                        .fold(0.0, |acc, (p, v)| acc + p * v);
                    mdp.reward(x, a) + expected
                })
                .collect()
        })
        .collect()
}

/// Backward induction for `V*` and `Q*`, ties to the lowest action index.
pub fn optimal_values(mdp: &SparseLinearMdp) -> ValueSequence {
    let h_max = mdp.horizon();
    let n = mdp.num_states();
    let mut values = vec![vec![0.0; n]; h_max + 1];
    let mut q = vec![Vec::new(); h_max];
    let mut greedy = vec![Vec::new(); h_max];
    for h in (0..h_max).rev() {
        let qh = bellman_backup(mdp, &values[h + 1]);
        let (acts, vals): (Vec<usize>, Vec<f64>) =
            qh.iter().map(|row| argmax(row.iter().copied())).unzip();
        values[h] = vals;
        greedy[h] = acts;
        q[h] = qh;
    }
    ValueSequence { values, q, argmax: Some(greedy) }
}

/// Backward induction for `V^π` and `Q^π`. The policy may be nonstationary and
/// must be defined at every state.
pub fn policy_values(mdp: &SparseLinearMdp, policy: &impl Policy) -> Result<ValueSequence> {
    let h_max = mdp.horizon();
    let n = mdp.num_states();
    let mut values = vec![vec![0.0; n]; h_max + 1];
    let mut q = vec![Vec::new(); h_max];
    for h in (0..h_max).rev() {
        let qh = bellman_backup(mdp, &values[h + 1]);
        for x in 0..n {
            let choice = checked_choice(mdp, policy, h, x)?;
            values[h][x] = average(&choice, &qh[x]);
        }
        q[h] = qh;
    }
    Ok(ValueSequence { values, q, argmax: None })
}

fn checked_choice<'p>(
    mdp: &SparseLinearMdp,
    policy: &'p impl Policy,
    step: usize,
    state: usize,
) -> Result<ActionChoice<'p>> {
    let choice = policy.choice(step, state).ok_or(Error::MissingPolicyRow(state))?;
    let ok = match choice {
        ActionChoice::Deterministic(a) => a < mdp.menu_size(state),
        ActionChoice::Distribution(p) => p.len() == mdp.menu_size(state),
    };
    if ok {
        Ok(choice)
    } else {
        Err(Error::MissingPolicyRow(state))
    }
}

fn average(choice: &ActionChoice<'_>, qs: &[f64]) -> f64 {
    match *choice {
        ActionChoice::Deterministic(a) => qs[a],
        ActionChoice::Distribution(p) => p.iter().zip(qs).fold(0.0, |acc, (w, v)| acc + w * v),
    }
}

/// `Pr(x_h = x, a_h = a)` for every step, by forward propagation from `ξ₀`.
/// The policy only needs to be defined where the state distribution has mass.
pub fn step_occupancies(mdp: &SparseLinearMdp, policy: &impl Policy) -> Result<Vec<Vec<Vec<f64>>>> {
    let n = mdp.num_states();
    let mut dist = mdp.initial().to_vec();
    let mut out = Vec::with_capacity(mdp.horizon());
    for h in 0..mdp.horizon() {
        let mut joint: Vec<Vec<f64>> = (0..n).map(|x| vec![0.0; mdp.menu_size(x)]).collect();
        let mut next = vec![0.0; n];
        for x in 0..n {
            if dist[x] == 0.0 {
                continue;
            }
            let choice = checked_choice(mdp, policy, h, x)?;
            for a in 0..mdp.menu_size(x) {
                let mass = dist[x] * choice.prob(a);
                if mass == 0.0 {
                    continue;
                }
                joint[x][a] = mass;
                for (nx, p) in next.iter_mut().zip(mdp.transition_row(x, a)) {
                    *nx += mass * p;
                }
            }
        }
        out.push(joint);
        dist = next;
    }
    Ok(out)
}

/// `μ^π(x, a) = (1/H) Σ_h Pr(x_h = x, a_h = a)`.
pub fn occupancy_frequencies(mdp: &SparseLinearMdp, policy: &impl Policy) -> Result<Vec<Vec<f64>>> {
    let steps = step_occupancies(mdp, policy)?;
    let scale = 1.0 / mdp.horizon() as f64;
    let mut mu: Vec<Vec<f64>> = (0..mdp.num_states()).map(|x| vec![0.0; mdp.menu_size(x)]).collect();
    for joint in &steps {
        for (row, src) in mu.iter_mut().zip(joint) {
            for (m, p) in row.iter_mut().zip(src) {
                *m += p;
            }
        }
    }
    for m in mu.iter_mut().flatten() {
        *m *= scale;
    }
    Ok(mu)
}

/// Expected uncentered feature covariance under a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceReport {
    pub matrix: Vec<Vec<f64>>,
    pub sigma_min: f64,
    pub restricted_eigenvalue: Option<(f64, f64)>,
}

/// `Σ_{x,a} w(x, a) φ(x, a) φ(x, a)ᵀ` for arbitrary pair weights.
pub fn weighted_covariance(mdp: &SparseLinearMdp, weights: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = mdp.dim();
    let mut m = vec![vec![0.0; d]; d];
    for (x, a) in mdp.features().pairs() {
        let w = weights[x][a];
        if w == 0.0 {
            continue;
        }
        let phi = mdp.features().phi(x, a);
        let nz: Vec<(usize, f64)> =
            phi.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        for &(i, vi) in &nz {
            let wi = w * vi;
            for &(j, vj) in &nz {
                m[i][j] += wi * vj;
            }
        }
    }
    m
}

pub fn expected_covariance(mdp: &SparseLinearMdp, policy: &impl Policy) -> Result<CovarianceReport> {
    let mu = occupancy_frequencies(mdp, policy)?;
    let matrix = weighted_covariance(mdp, &mu);
    let sigma_min = min_eigenvalue(&matrix)?;
    Ok(CovarianceReport { matrix, sigma_min, restricted_eigenvalue: None })
}
