//! On a deterministic tabular MDP with one-hot features, an unpenalized fit
//! and every pair covered, fitted-Q iteration reproduces value iteration.

use rand::Rng;
use sparse_rl::dp::optimal_values;
use sparse_rl::fqi::{fitted_q_iteration, partition_folds};
use sparse_rl::linmdp::{
    build_tabular_feature_map, sample_episode, stream_from_seed, MdpParts, SparseLinearMdp,
    StationaryPolicy,
};
use sparse_rl::sparsereg::LassoConfig;

fn deterministic_tabular(states: usize, actions: usize, horizon: usize, seed: u64) -> sparse_rl::Result<SparseLinearMdp> {
    let mut rng = stream_from_seed(seed);
    let transitions: Vec<Vec<Vec<f64>>> = (0..states)
        .map(|_| {
            (0..actions)
                .map(|_| {
                    let mut row = vec![0.0; states];
                    row[rng.gen_range(0..states)] = 1.0;
                    row
                })
                .collect()
        })
        .collect();
    SparseLinearMdp::from_parts(MdpParts {
        horizon,
        sparsity: states * actions,
        features: build_tabular_feature_map(states, actions)?,
        active_set: (0..states * actions).collect(),
        factors: transitions.iter().flatten().cloned().collect(),
        rewards: (0..states).map(|_| (0..actions).map(|_| rng.gen()).collect()).collect(),
        initial: vec![1.0 / states as f64; states],
        transitions: Some(transitions),
        clamped: None,
    })
}

fn main() -> sparse_rl::Result<()> {
    let (states, actions, horizon) = (8, 3, 4);
    let mdp = deterministic_tabular(states, actions, horizon, 5)?;
    let mut rng = stream_from_seed(9);
    let uniform = StationaryPolicy::uniform(&mdp);
    let episodes = (0..500 * horizon)
        .map(|_| sample_episode(&mdp, &uniform, &mut rng))
        .collect::<sparse_rl::Result<Vec<_>>>()?;
    let folds = partition_folds(episodes, horizon)?;
    let stack = fitted_q_iteration(&folds, &mdp.learner_view(), &LassoConfig::with_lambda(0.0))?;

    let exact = optimal_values(&mdp);
    let view = mdp.learner_view();
    for h in 0..horizon {
        let gap = mdp
            .features()
            .pairs()
            .map(|(x, a)| (view.q_value(x, a, &stack.weights[h]) - exact.q[h][x][a]).abs())
            .fold(0.0, f64::max);
        println!("step {}: max |Q_hat - Q*| = {gap:.2e}", h + 1);
    }
    Ok(())
}
