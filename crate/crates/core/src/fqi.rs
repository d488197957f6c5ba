//! Fitted-Q-iteration over `H` disjoint folds of exploration episodes.
//!
//! `Q_w(x, a) = r(x, a) + φ(x, a)ᵀ w`: rewards are known, so the regression
//! only has to model the expected next-step value.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmdp::{DeterministicPolicy, LearnerView, SparseLinearMdp, Trajectory};
use crate::sparsereg::{LassoConfig, RegressionDataset, Regressor};

/// Episodes split into `H` consecutive blocks of `R` episodes each.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    pub folds: Vec<Vec<Trajectory>>,
    pub episodes_per_fold: usize,
}

/// Fold `h` receives episodes `h R .. (h + 1) R` in arrival order.
pub fn partition_folds(batch: Vec<Trajectory>, horizon: usize) -> Result<EpisodeBatch> {
    if horizon == 0 || batch.is_empty() || batch.len() % horizon != 0 {
        return Err(Error::FoldSize { episodes: batch.len(), horizon });
    }
    let r = batch.len() / horizon;
    let mut it = batch.into_iter();
    let folds = (0..horizon).map(|_| it.by_ref().take(r).collect()).collect();
    Ok(EpisodeBatch { folds, episodes_per_fold: r })
}

/// `ŵ_1, ..., ŵ_H, ŵ_{H+1} = 0` stored 0-based, plus per-step convergence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightStack {
    pub weights: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
}

impl WeightStack {
    pub fn horizon(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|c| *c)
    }

    /// Rows `h, coordinate, value` with 1-based `h`, including the zero
    /// terminal vector.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["h", "coordinate", "value"])?;
        for (h, row) in self.weights.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                w.write_record([(h + 1).to_string(), k.to_string(), format!("{v:.17e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `Π_{[lo, hi]}`.
pub fn truncate(v: f64, lo: f64, hi: f64) -> f64 {
    v.clamp(lo, hi)
}

/// `max_a Q_w(x, a)` for every state.
pub fn state_values(view: &LearnerView<'_>, w: &[f64]) -> Vec<f64> {
    (0..view.num_states()).map(|x| view.best_action(x, w).1).collect()
}

/// Regression data for step `h`: one weighted row per distinct visited pair,
/// whose target is the mean of the truncated next-state values.
pub fn step_dataset(
    fold: &[Trajectory],
    view: &LearnerView<'_>,
    next_weights: Option<&[f64]>,
) -> Result<RegressionDataset> {
    let cap = view.horizon as f64;
    let next_values = next_weights.map(|w| state_values(view, w));
    let mut groups: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for t in fold.iter().flat_map(|e| &e.steps) {
        let y = next_values.as_ref().map_or(0.0, |v| truncate(v[t.next_state], 0.0, cap));
        let slot = groups.entry((t.state, t.action)).or_insert((0.0, 0.0));
        slot.0 += 1.0;
        slot.1 += y;
    }
    let mut rows = Vec::with_capacity(groups.len());
    let mut targets = Vec::with_capacity(groups.len());
    let mut weights = Vec::with_capacity(groups.len());
    for ((x, a), (count, sum)) in groups {
        rows.push(view.features.phi(x, a).to_vec());
        targets.push(sum / count);
        weights.push(count);
    }
    RegressionDataset::weighted(rows, targets, weights)
}

/// Backward regression `h = H..1` with any warm-startable regressor; step `h`
/// only sees fold `h` and starts from `ŵ_{h+1}`.
pub fn fitted_q_iteration(
    folds: &EpisodeBatch,
    view: &LearnerView<'_>,
    regressor: &impl Regressor,
) -> Result<WeightStack> {
    let horizon = view.horizon;
    if folds.folds.len() != horizon {
        return Err(Error::Dimension(format!(
            "{} folds for horizon {horizon}",
            folds.folds.len()
        )));
    }
    let d = view.features.dim();
    let mut weights = vec![vec![0.0; d]; horizon + 1];
    let mut converged = vec![true; horizon];
    for h in (0..horizon).rev() {
        let next = (h + 1 < horizon).then(|| weights[h + 1].as_slice());
        let data = step_dataset(&folds.folds[h], view, next)?;
        let (w, ok) = regressor.fit(&data, Some(&weights[h + 1]))?;
        weights[h] = w;
        converged[h] = ok;
    }
    Ok(WeightStack { weights, converged })
}

/// Lasso fitted-Q-iteration.
pub fn lasso_fqi(folds: &EpisodeBatch, view: &LearnerView<'_>, cfg: &LassoConfig) -> Result<WeightStack> {
    fitted_q_iteration(folds, view, cfg)
}

/// Greedy action `argmax_a Q_{ŵ_h}(x, a)` per step and state, ties to the
/// lowest index.
pub fn greedy_policy(weights: &WeightStack, view: &LearnerView<'_>) -> DeterministicPolicy {
    let actions = weights.weights[..weights.horizon()]
        .iter()
        .map(|w| (0..view.num_states()).map(|x| view.best_action(x, w).0).collect())
        .collect();
    DeterministicPolicy { actions }
}

/// `w̄_k = Σ_{x'} Π_{[0,H]} V(x') ψ_k(x')` on the active set and zero
/// elsewhere. Needs the true factors, so it is an analysis tool only.
pub fn oracle_bellman_weights(mdp: &SparseLinearMdp, value_fn: &[f64]) -> Result<Vec<f64>> {
    if value_fn.len() != mdp.num_states() {
        return Err(Error::Dimension("one value per state expected".into()));
    }
    let cap = mdp.horizon() as f64;
    let mut w = vec![0.0; mdp.dim()];
    for (&k, psi) in mdp.active_set().iter().zip(mdp.factors()) {
        w[k] = psi
            .iter()
            .zip(value_fn)
            .map(|(p, v)| p * truncate(*v, 0.0, cap))
            .sum();
    }
    Ok(w)
}
