//! Lasso by cyclic coordinate descent, symmetric eigenvalues by Jacobi
//! rotations, and restricted-eigenvalue intervals.

use std::io::Read;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linmdp::{dot, Stream};

/// `sign(v) * max(|v| - t, 0)`.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Design rows, targets and optional per-row multiplicities.
///
/// A weighted row counts as `weight` identical copies in every sum, so a
/// dataset compressed by averaging targets over repeated rows has the same
/// Lasso minimizer as the raw one.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    dim: usize,
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl RegressionDataset {
    pub fn new(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        Self::build(rows, targets, None)
    }

    pub fn weighted(rows: Vec<Vec<f64>>, targets: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != rows.len() {
            return Err(Error::Dimension("one weight per row expected".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return invalid("row weights must be positive and finite");
        }
        Self::build(rows, targets, Some(weights))
    }

    fn build(rows: Vec<Vec<f64>>, targets: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return invalid("a regression dataset needs at least one row");
        }
        if rows.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} targets",
                rows.len(),
                targets.len()
            )));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return invalid("design rows must be nonempty");
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("design rows have different lengths".into()));
        }
        if rows.iter().flatten().chain(&targets).any(|v| !v.is_finite()) {
            return invalid("design and targets must be finite");
        }
        Ok(Self { dim, rows, targets, weights })
    }

    /// Reads a header row followed by `y, phi_1, ..., phi_d` records.
    pub fn from_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidInput(format!("bad number {f:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() < 2 {
                return invalid("each record needs a target and at least one feature");
            }
            targets.push(vals[0]);
            rows.push(vals[1..].to_vec());
        }
        Self::new(rows, targets)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    /// Effective sample size `n` (sum of the weights).
    pub fn total_weight(&self) -> f64 {
        self.weights.as_ref().map_or(self.rows.len() as f64, |w| w.iter().sum())
    }

    /// `(1/n) Σ (y - φᵀw)²`.
    pub fn mean_squared_error(&self, w: &[f64]) -> f64 {
        let sse: f64 = (0..self.len())
            .map(|i| {
                let r = self.targets[i] - dot(&self.rows[i], w);
                self.weight(i) * r * r
            })
            .sum();
        sse / self.total_weight()
    }

    /// `(2/n) Σ φ (y - φᵀw)`, the negative gradient of the squared loss.
    pub fn correlation(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for i in 0..self.len() {
            let r = self.weight(i) * (self.targets[i] - dot(&self.rows[i], w));
            for (gj, phi) in g.iter_mut().zip(&self.rows[i]) {
                *gj += r * phi;
            }
        }
        let scale = 2.0 / self.total_weight();
        g.iter_mut().for_each(|v| *v *= scale);
        g
    }
}

/// `(1/n) Σ (y - φᵀw)² + λ ‖w‖₁`.
pub fn lasso_objective(data: &RegressionDataset, w: &[f64], lambda: f64) -> f64 {
    data.mean_squared_error(w) + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Largest violation of the Lasso subgradient conditions at `w`.
pub fn kkt_violation(data: &RegressionDataset, w: &[f64], lambda: f64) -> f64 {
    data.correlation(w)
        .iter()
        .zip(w)
        .map(|(g, wj)| {
            if *wj != 0.0 {
                (g - lambda * wj.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Which expression to use for the regularization strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaMode {
    /// `H * sqrt(log(2d/δ) / (R H))`, using the per-fold sample size.
    #[default]
    FoldSize,
    /// `H * sqrt(log(2d) / N)`, using the total episode count.
    TotalEpisodes,
}

/// Regularization strength for a fold of `fold_samples = R H` transitions, or
/// for `total_episodes = N`, depending on the mode.
pub fn regularization(
    mode: LambdaMode,
    horizon: usize,
    d: usize,
    delta: f64,
    fold_samples: usize,
    total_episodes: usize,
) -> f64 {
    let h = horizon as f64;
    match mode {
        LambdaMode::FoldSize => h * ((2.0 * d as f64 / delta).ln() / fold_samples as f64).sqrt(),
        LambdaMode::TotalEpisodes => h * ((2.0 * d as f64).ln() / total_episodes as f64).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    pub lambda: f64,
    /// Stop once the largest coordinate change in a sweep is at most this.
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub delta: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self { lambda: 0.0, tolerance: 1e-8, max_sweeps: 10_000, delta: 0.1 }
    }
}

impl LassoConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self { lambda, ..Self::default() }
    }

    fn check(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return invalid(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(self.tolerance > 0.0) {
            return invalid("tolerance must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub weights: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
    pub objective: f64,
}

/// Cyclic coordinate descent from the zero vector.
pub fn lasso_fit(data: &RegressionDataset, cfg: &LassoConfig) -> Result<LassoFit> {
    lasso_fit_from(data, cfg, None)
}

/// Cyclic coordinate descent from `start` (zero when `None`), coordinates
/// visited in order `0..d` every sweep.
pub fn lasso_fit_from(
    data: &RegressionDataset,
    cfg: &LassoConfig,
    start: Option<&[f64]>,
) -> Result<LassoFit> {
    lasso_trace(data, cfg, start, |_| {})
}

/// Same as [`lasso_fit_from`] but reports the objective after each sweep of
/// the final stage.
///
/// From a cold start with `λ` well below `λ_max = ‖(2/n) Σ yᵢ φᵢ‖_∞` the solver
/// first walks down a geometric ladder of larger penalties, each stage warm
/// starting the next; this keeps the iterates sparse where plain cyclic
/// descent crawls.
pub fn lasso_trace(
    data: &RegressionDataset,
    cfg: &LassoConfig,
    start: Option<&[f64]>,
    mut on_sweep: impl FnMut(f64),
) -> Result<LassoFit> {
    cfg.check()?;
    let d = data.dim();
    let mut w = match start {
        Some(s) if s.len() == d => s.to_vec(),
        Some(s) => {
            return Err(Error::Dimension(format!("start has length {} but d = {d}", s.len())))
        }
        None => vec![0.0; d],
    };
    let reduced = gram_reduction(data);
    let (work, offset) = match &reduced {
        Some(r) => (r, data.mean_squared_error(&w) - r.mean_squared_error(&w)),
        None => (data, 0.0),
    };
    let mut on_sweep = |obj: f64| on_sweep(obj + offset);
    let mut solver = Descent::new(work, &mut w);
    let mut sweeps = 0;
    if start.is_none() {
        let lambda_max = work.correlation(&vec![0.0; d]).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut stage = lambda_max;
        loop {
            stage *= CONTINUATION_RATIO;
            if stage <= cfg.lambda || stage < CONTINUATION_FLOOR * lambda_max {
                break;
            }
            let stage_budget = (cfg.max_sweeps / 20).min(cfg.max_sweeps - sweeps);
            let (used, _) =
                solver.run(&mut w, stage, cfg.tolerance.max(1e-6), stage_budget, &mut |_| {});
            sweeps += used;
        }
    }
    let budget = cfg.max_sweeps.saturating_sub(sweeps).max(1);
    let (used, converged) = solver.run(&mut w, cfg.lambda, cfg.tolerance, budget, &mut on_sweep);
    sweeps += used;
    let objective = lasso_objective(data, &w, cfg.lambda);
    Ok(LassoFit { weights: w, converged, sweeps, objective })
}

const CONTINUATION_RATIO: f64 = 0.7;
const CONTINUATION_FLOOR: f64 = 1e-4;
const POLISH_EVERY: usize = 25;

/// Cyclic coordinate descent state: a column-major copy of the design and
/// the residual `y - Φw`, maintained incrementally.
struct Descent<'a> {
    data: &'a RegressionDataset,
    n: usize,
    cols: Vec<f64>,
    /// `cols` scaled by the row weights; empty when every weight is one.
    wcols: Vec<f64>,
    norms: Vec<f64>,
    weights: Vec<f64>,
    total: f64,
    resid: Vec<f64>,
}

impl<'a> Descent<'a> {
    fn new(data: &'a RegressionDataset, w: &mut [f64]) -> Self {
        let d = data.dim();
        let n = data.len();
        let weights: Vec<f64> = (0..n).map(|i| data.weight(i)).collect();
        let mut cols = vec![0.0; n * d];
        for (i, row) in data.rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                cols[j * n + i] = *v;
            }
        }
        let norms: Vec<f64> = (0..d)
            .map(|j| cols[j * n..(j + 1) * n].iter().zip(&weights).map(|(v, wi)| wi * v * v).sum())
            .collect();
        for (wj, c) in w.iter_mut().zip(&norms) {
            if *c == 0.0 {
                *wj = 0.0;
            }
        }
        let wcols = if weights.iter().all(|wi| *wi == 1.0) {
            Vec::new()
        } else {
            cols.iter().enumerate().map(|(k, v)| v * weights[k % n]).collect()
        };
        let mut out =
            Self { data, n, cols, wcols, norms, weights, total: data.total_weight(), resid: vec![0.0; n] };
        out.resid = out.residual(w);
        out
    }

    fn residual(&self, w: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.data.targets[i] - dot(&self.data.rows[i], w)).collect()
    }

    fn objective(&self, w: &[f64], resid: &[f64], lambda: f64) -> f64 {
        let sse: f64 = resid.iter().zip(&self.weights).map(|(r, wi)| wi * r * r).sum();
        sse / self.total + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Returns the number of sweeps used and whether the tolerance was met.
    fn run(
        &mut self,
        w: &mut Vec<f64>,
        lambda: f64,
        tolerance: f64,
        max_sweeps: usize,
        on_sweep: &mut dyn FnMut(f64),
    ) -> (usize, bool) {
        let n = self.n;
        let mut history: Vec<Vec<f64>> = vec![w.clone()];
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            sweeps += 1;
            let mut max_change = 0.0_f64;
            for j in 0..w.len() {
                let c = self.norms[j];
                if c == 0.0 {
                    continue;
                }
                let col = &self.cols[j * n..(j + 1) * n];
                let weighted = if self.wcols.is_empty() { col } else { &self.wcols[j * n..(j + 1) * n] };
                let corr = lane_dot(weighted, &self.resid);
                let old = w[j];
                let new = soft_threshold(old + corr / c, self.total * lambda / (2.0 * c));
                let delta = new - old;
                if delta != 0.0 {
                    for (r, v) in self.resid.iter_mut().zip(col) {
                        *r -= delta * v;
                    }
                    w[j] = new;
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change <= tolerance {
                on_sweep(self.objective(w, &self.resid, lambda));
                return (sweeps, true);
            }
            history.push(w.clone());
            if history.len() == ANDERSON_DEPTH + 1 {
                if let Some(extrapolated) = anderson_step(&history) {
                    self.accept_if_better(w, extrapolated, lambda);
                }
                history.clear();
                history.push(w.clone());
            }
            if sweeps % POLISH_EVERY == 0 {
                self.polish_with_pruning(w, lambda);
            }
            on_sweep(self.objective(w, &self.resid, lambda));
        }
        (sweeps, false)
    }

    fn accept_if_better(&mut self, w: &mut Vec<f64>, candidate: Vec<f64>, lambda: f64) {
        let resid = self.residual(&candidate);
        if self.objective(&candidate, &resid, lambda) < self.objective(w, &self.resid, lambda) {
            *w = candidate;
            self.resid = resid;
        }
    }

    /// Tries the stationarity solve on the current support and on the
    /// supports obtained by dropping its few smallest entries, keeping any
    /// candidate that lowers the objective.
    fn polish_with_pruning(&mut self, w: &mut Vec<f64>, lambda: f64) {
        let mut support: Vec<usize> = (0..w.len()).filter(|&j| w[j] != 0.0).collect();
        support.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
        let mut candidates: Vec<Vec<usize>> = Vec::new();
        if support.len() <= self.n {
            candidates.push(support.clone());
        }
        // single removals, smallest magnitude first
        if support.len() <= self.n + 1 {
            for drop in (0..support.len()).rev() {
                let mut c = support.clone();
                c.remove(drop);
                candidates.push(c);
            }
        }
        let largest = support.len().min(self.n);
        for size in (largest.saturating_sub(3).max(1)..=largest).rev() {
            candidates.push(support[..size].to_vec());
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mut chosen in candidates {
            chosen.sort_unstable();
            if let Some(candidate) = self.polish(w, &chosen, lambda) {
                let obj = self.objective(&candidate, &self.residual(&candidate), lambda);
                if best.as_ref().map_or(true, |(b, _)| obj < *b) {
                    best = Some((obj, candidate));
                }
            }
        }
        if let Some((_, candidate)) = best {
            self.accept_if_better(w, candidate, lambda);
        }
    }

    /// Solves the stationarity equations on `support` with the signs of `w`.
    /// Returns `None` when the restricted Gram matrix is singular or the
    /// solution flips a sign.
    fn polish(&self, w: &[f64], support: &[usize], lambda: f64) -> Option<Vec<f64>> {
        let k = support.len();
        if k == 0 || k > self.n {
            return None;
        }
        let n = self.n;
        let col = |j: usize| &self.cols[j * n..(j + 1) * n];
        let mut gram = vec![vec![0.0; k]; k];
        let mut rhs = vec![0.0; k];
        for (a, &ja) in support.iter().enumerate() {
            let ca = col(ja);
            for (b, &jb) in support.iter().enumerate().take(a + 1) {
                let cb = col(jb);
                gram[a][b] = (0..n).map(|i| self.weights[i] * ca[i] * cb[i]).sum::<f64>() / self.total;
            }
            rhs[a] = (0..n).map(|i| self.weights[i] * ca[i] * self.data.targets[i]).sum::<f64>() / self.total
                - 0.5 * lambda * w[ja].signum();
        }
        let sol = cholesky_solve(gram, rhs).ok()?;
        let mut out = vec![0.0; w.len()];
        for (&j, v) in support.iter().zip(&sol) {
            if v.signum() != w[j].signum() || !v.is_finite() {
                return None;
            }
            out[j] = *v;
        }
        Some(out)
    }
}

/// Dot product with eight independent partial sums, which lets the compiler
/// vectorize it.
fn lane_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

const ANDERSON_DEPTH: usize = 5;

/// Anderson extrapolation of a sequence of sweep iterates: the affine
/// combination of the last iterates whose consecutive differences cancel best.
fn anderson_step(history: &[Vec<f64>]) -> Option<Vec<f64>> {
    let k = history.len() - 1;
    let diffs: Vec<Vec<f64>> = (0..k)
        .map(|i| history[i + 1].iter().zip(&history[i]).map(|(a, b)| a - b).collect())
        .collect();
    let mut gram: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| dot(&diffs[i], &diffs[j])).collect()).collect();
    let trace: f64 = (0..k).map(|i| gram[i][i]).sum();
    if !(trace > 0.0) {
        return None;
    }
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += 1e-10 * trace;
    }
    let z = cholesky_solve(gram, vec![1.0; k]).ok()?;
    let total: f64 = z.iter().sum();
    if !total.is_finite() || total == 0.0 {
        return None;
    }
    let d = history[0].len();
    let mut out = vec![0.0; d];
    for (i, zi) in z.iter().enumerate() {
        let c = zi / total;
        for (o, v) in out.iter_mut().zip(&history[i + 1]) {
            *o += c * v;
        }
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// A linear regressor that can be warm-started.
pub trait Regressor: Sync {
    fn fit(&self, data: &RegressionDataset, start: Option<&[f64]>) -> Result<(Vec<f64>, bool)>;
}

impl Regressor for LassoConfig {
    fn fit(&self, data: &RegressionDataset, start: Option<&[f64]>) -> Result<(Vec<f64>, bool)> {
        let fit = lasso_fit_from(data, self, start)?;
        Ok((fit.weights, fit.converged))
    }
}

/// `(1/n) Σ (y - φᵀw)² + λ ‖w‖₂²`, solved in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeConfig {
    pub lambda: f64,
}

impl Regressor for RidgeConfig {
    fn fit(&self, data: &RegressionDataset, _start: Option<&[f64]>) -> Result<(Vec<f64>, bool)> {
        if !(self.lambda > 0.0) {
            return invalid("ridge penalty must be positive");
        }
        let d = data.dim();
        let total = data.total_weight();
        let mut gram = vec![vec![0.0; d]; d];
        let mut rhs = vec![0.0; d];
        for (i, row) in data.rows.iter().enumerate() {
            let wi = data.weight(i) / total;
            for a in 0..d {
                if row[a] == 0.0 {
                    continue;
                }
                let va = wi * row[a];
                rhs[a] += va * data.targets[i];
                for b in 0..=a {
                    gram[a][b] += va * row[b];
                }
            }
        }
        for (a, row) in gram.iter_mut().enumerate() {
            row[a] += self.lambda;
        }
        Ok((cholesky_solve(gram, rhs)?, true))
    }
}

/// Solves `A x = b` for symmetric positive definite `A`, reading only the
/// lower triangle.
fn cholesky_solve(a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let a = cholesky_factor(a)?;
    let d = b.len();
    for i in 0..d {
        for k in 0..i {
            b[i] -= a[i][k] * b[k];
        }
        b[i] /= a[i][i];
    }
    for i in (0..d).rev() {
        for k in i + 1..d {
            b[i] -= a[k][i] * b[k];
        }
        b[i] /= a[i][i];
    }
    Ok(b)
}

/// Lower Cholesky factor `L` with `A = L Lᵀ`, read from the lower triangle.
fn cholesky_factor(mut a: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let d = a.len();
    for j in 0..d {
        let mut diag = a[j][j];
        for k in 0..j {
            diag -= a[j][k] * a[j][k];
        }
        if !(diag > 0.0) {
            return invalid("matrix is not positive definite");
        }
        let l = diag.sqrt();
        a[j][j] = l;
        for i in j + 1..d {
            let mut v = a[i][j];
            for k in 0..j {
                v -= a[i][k] * a[j][k];
            }
            a[i][j] = v / l;
        }
        a[j][j + 1..].fill(0.0);
    }
    Ok(a)
}

/// A `d`-row dataset with the same Lasso minimizer as a tall one, built from
/// the Cholesky factor of its Gram matrix. `None` when the dataset is not
/// tall or the Gram matrix is singular.
fn gram_reduction(data: &RegressionDataset) -> Option<RegressionDataset> {
    let d = data.dim();
    if data.len() < GRAM_REDUCTION_RATIO * d {
        return None;
    }
    let mut gram = vec![0.0; d * d];
    let mut cross = vec![0.0; d];
    for (i, row) in data.rows.iter().enumerate() {
        let wi = data.weight(i);
        for a in 0..d {
            let scaled = wi * row[a];
            cross[a] += scaled * data.targets[i];
            for (g, v) in gram[a * d..=a * d + a].iter_mut().zip(&row[..=a]) {
                *g += scaled * v;
            }
        }
    }
    let lower = cholesky_factor(gram.chunks(d).map(<[f64]>::to_vec).collect()).ok()?;
    let mut t = cross;
    for i in 0..d {
        for k in 0..i {
            t[i] -= lower[i][k] * t[k];
        }
        t[i] /= lower[i][i];
    }
    let scale = (d as f64 / data.total_weight()).sqrt();
    let rows = (0..d).map(|k| (0..d).map(|j| lower[j][k] * scale).collect()).collect();
    let targets = t.into_iter().map(|v| v * scale).collect();
    RegressionDataset::new(rows, targets).ok()
}

const GRAM_REDUCTION_RATIO: usize = 8;

// ---------------------------------------------------------------------------
// Eigenvalues
// ---------------------------------------------------------------------------

pub const SYMMETRY_TOL: f64 = 1e-10;

fn check_symmetric(m: &[Vec<f64>]) -> Result<()> {
    let d = m.len();
    if m.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("matrix is not square".into()));
    }
    for i in 0..d {
        for j in 0..i {
            let gap = (m[i][j] - m[j][i]).abs();
            if !(gap <= SYMMETRY_TOL) {
                return Err(Error::Asymmetric { row: i, col: j, gap });
            }
        }
    }
    Ok(())
}

/// All eigenvalues of a symmetric matrix in ascending order, by cyclic Jacobi
/// rotations.
pub fn symmetric_eigenvalues(m: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_symmetric(m)?;
    let d = m.len();
    if d == 0 {
        return invalid("empty matrix");
    }
    let mut a: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| 0.5 * (m[i][j] + m[j][i])).collect())
        .collect();
    let scale = a.iter().flatten().fold(0.0_f64, |s, v| s.max(v.abs())).max(f64::MIN_POSITIVE);
    for _ in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p][q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..d).map(|i| a[i][i]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &[Vec<f64>]) -> Result<f64> {
    Ok(symmetric_eigenvalues(m)?[0])
}

// ---------------------------------------------------------------------------
// Restricted eigenvalue
// ---------------------------------------------------------------------------

/// `[lower, upper]` bracket for the restricted minimum eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReInterval {
    pub lower: f64,
    pub upper: f64,
}

/// Cone ratio `⟨β, Mβ⟩ / ‖β_S‖₂²` for the support `support`.
pub fn cone_ratio(m: &[Vec<f64>], beta: &[f64], support: &[usize]) -> f64 {
    let quad: f64 = (0..beta.len())
        .map(|i| beta[i] * dot(&m[i], beta))
        .sum();
    let head: f64 = support.iter().map(|&i| beta[i] * beta[i]).sum();
    quad / head
}

/// Support, orthant and starting point of one local search.
#[derive(Debug, Clone)]
struct SearchStart {
    support: Vec<usize>,
    signs: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Projected gradient on `u` in the simplex (the support block, with fixed
/// signs) and `v` in the ℓ₁ ball of radius 3 (the off-support block). Every
/// cone vector is a positive multiple of one of these after normalizing
/// `‖β_S‖₁ = 1`.
fn local_cone_search(m: &[Vec<f64>], start: &SearchStart) -> f64 {
    let d = m.len();
    let off: Vec<usize> = (0..d).filter(|i| !start.support.contains(i)).collect();
    let assemble = |u: &[f64], v: &[f64]| {
        let mut beta = vec![0.0; d];
        for (k, &i) in start.support.iter().enumerate() {
            beta[i] = start.signs[k] * u[k];
        }
        for (k, &i) in off.iter().enumerate() {
            beta[i] = v[k];
        }
        beta
    };
    let eval = |u: &[f64], v: &[f64]| {
        let beta = assemble(u, v);
        let mb: Vec<f64> = m.iter().map(|row| dot(row, &beta)).collect();
        let quad = dot(&beta, &mb);
        let head: f64 = u.iter().map(|x| x * x).sum();
        (quad / head, mb, quad, head)
    };
    let mut u = start.u.clone();
    let mut v = start.v.clone();
    let (mut f, mut mb, mut quad, mut head) = eval(&u, &v);
    let mut step = 1.0;
    for _ in 0..2000 {
        // gradient of quad / head
        let gu: Vec<f64> = start
            .support
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                (2.0 * start.signs[k] * mb[i] * head - quad * 2.0 * u[k]) / (head * head)
            })
            .collect();
        let gv: Vec<f64> = off.iter().map(|&i| 2.0 * mb[i] / head).collect();
        let mut improved = false;
        while step > 1e-14 {
            let nu: Vec<f64> = u.iter().zip(&gu).map(|(x, g)| x - step * g).collect();
            let nv: Vec<f64> = v.iter().zip(&gv).map(|(x, g)| x - step * g).collect();
            let nu = project_simplex(&nu, 1.0);
            let nv = project_l1_ball(&nv, 3.0);
            let cand = eval(&nu, &nv);
            if cand.0 < f - 1e-16 * f.abs().max(1.0) {
                let moved = nu.iter().zip(&u).chain(nv.iter().zip(&v)).fold(0.0_f64, |s, (a, b)| s.max((a - b).abs()));
                u = nu;
                v = nv;
                let converged = f - cand.0 <= 1e-14 * f.abs().max(1e-12) || moved <= 1e-13;
                (f, mb, quad, head) = cand;
                step *= 2.0;
                improved = !converged;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    f
}

/// Euclidean projection onto `{x ≥ 0, Σx = z}`.
pub(crate) fn project_simplex(y: &[f64], z: f64) -> Vec<f64> {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - z) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Euclidean projection onto `{‖x‖₁ ≤ z}`.
pub(crate) fn project_l1_ball(y: &[f64], z: f64) -> Vec<f64> {
    let norm: f64 = y.iter().map(|v| v.abs()).sum();
    if norm <= z {
        return y.to_vec();
    }
    let abs: Vec<f64> = y.iter().map(|v| v.abs()).collect();
    let p = project_simplex(&abs, z);
    p.iter().zip(y).map(|(a, v)| a * v.signum()).collect()
}

fn combinations(d: usize, s: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(s);
    fn rec(start: usize, d: usize, s: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == s {
            out.push(cur.clone());
            return;
        }
        for i in start..d {
            cur.push(i);
            rec(i + 1, d, s, cur, out);
            cur.pop();
        }
    }
    rec(0, d, s, &mut cur, &mut out);
    out
}

/// Sign patterns on `s` coordinates with the first sign fixed to `+` (the
/// ratio is invariant under `β → -β`).
fn orthants(s: usize) -> Vec<Vec<f64>> {
    (0..1usize << (s - 1))
        .map(|bits| {
            (0..s)
                .map(|k| if k > 0 && bits >> (k - 1) & 1 == 1 { -1.0 } else { 1.0 })
                .collect()
        })
        .collect()
}

fn check_re_inputs(m: &[Vec<f64>], s: usize) -> Result<()> {
    check_symmetric(m)?;
    if s == 0 || s > m.len() {
        return invalid(format!("need 1 <= s <= d, got s = {s}, d = {}", m.len()));
    }
    Ok(())
}

/// Upper probe from every support of size `s`, every orthant, and a fixed set
/// of starting points. Supports smaller than `s` never give a smaller
/// minimum, so they are skipped.
pub fn re_upper_enumerated(m: &[Vec<f64>], s: usize) -> Result<f64> {
    check_re_inputs(m, s)?;
    let d = m.len();
    let mut starts = Vec::new();
    for support in combinations(d, s) {
        for signs in orthants(s) {
            let mut us = vec![vec![1.0 / s as f64; s]];
            for k in 0..s {
                let mut e = vec![0.0; s];
                e[k] = 1.0;
                us.push(e);
            }
            for u in us {
                starts.push(SearchStart {
                    support: support.clone(),
                    signs: signs.clone(),
                    u,
                    v: vec![0.0; d - s],
                });
            }
        }
    }
    Ok(starts
        .par_iter()
        .map(|st| local_cone_search(m, st))
        .reduce(|| f64::INFINITY, f64::min))
}

/// Upper probe from `budget` random (support, orthant, start) triples.
pub fn re_upper_randomized(m: &[Vec<f64>], s: usize, budget: usize, rng: &mut Stream) -> Result<f64> {
    check_re_inputs(m, s)?;
    let d = m.len();
    let idx: Vec<usize> = (0..d).collect();
    let starts: Vec<SearchStart> = (0..budget.max(1))
        .map(|_| {
            let mut support: Vec<usize> = idx.choose_multiple(rng, s).copied().collect();
            support.sort_unstable();
            let mut signs: Vec<f64> = (0..s).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect();
            let flip = signs[0];
            signs.iter_mut().for_each(|v| *v *= flip);
            let raw: Vec<f64> = (0..s).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let total: f64 = raw.iter().sum();
            let u = raw.iter().map(|v| v / total).collect();
            let radius = 3.0 * rng.gen::<f64>();
            let v = project_l1_ball(
                &(0..d - s).map(|_| rng.gen_range(-1.0..=1.0) * radius).collect::<Vec<_>>(),
                radius,
            );
            SearchStart { support, signs, u, v }
        })
        .collect();
    Ok(starts
        .par_iter()
        .map(|st| local_cone_search(m, st))
        .reduce(|| f64::INFINITY, f64::min))
}

/// Bracket for the restricted minimum eigenvalue. The lower endpoint is the
/// certified `σ_min(M)`; the upper endpoint is the best cone ratio found by a
/// randomized search (plus exhaustive enumeration when `d ≤ 12, s ≤ 3`).
pub fn restricted_eigenvalue_estimate(
    m: &[Vec<f64>],
    s: usize,
    search_budget: usize,
    rng: &mut Stream,
) -> Result<ReInterval> {
    check_re_inputs(m, s)?;
    let lower = min_eigenvalue(m)?;
    let mut upper = re_upper_randomized(m, s, search_budget, rng)?;
    if m.len() <= 12 && s <= 3 {
        upper = upper.min(re_upper_enumerated(m, s)?);
    }
    Ok(ReInterval { lower, upper: upper.max(lower) })
}

/// Reads a square matrix from headerless CSV.
pub fn matrix_from_csv(reader: impl Read) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidInput(format!("bad number {f:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows.len()) {
        return Err(Error::Dimension("matrix CSV must be square and nonempty".into()));
    }
    Ok(rows)
}
