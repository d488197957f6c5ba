//! Compares Lasso and ridge explore-then-commit with the uniform and optimal
//! baselines on one instance and one seed.

use sparse_rl::agents::{
    choose_exploration_length, explore_then_commit, lasso_config_for, run_baseline, BaselineKind,
    BaselineParams, BudgetMode, RunOptions,
};
use sparse_rl::linmdp::{make_random_sparse_mdp_with, stream_from_seed, RandomMdpOptions, StationaryPolicy};
use sparse_rl::sparsereg::LambdaMode;

fn main() -> sparse_rl::Result<()> {
    let mdp = make_random_sparse_mdp_with(5, 3, 40, 3, 3, 8, RandomMdpOptions { distractors: true })?;
    let pi_e = StationaryPolicy::uniform(&mdp);
    let n = 6000;
    let budget = choose_exploration_length(n, 3, mdp.dim(), 3, 0.05, 0.1, BudgetMode::Rate { coefficient: 3.0 })?;
    let opts = RunOptions::default();

    let lasso = lasso_config_for(&budget, LambdaMode::FoldSize);
    let run = explore_then_commit(&mdp, &pi_e, n, &budget, &lasso, &mut stream_from_seed(1), opts)?;
    println!("{:<16} {:>10.3}", "lasso-fqi-etc", run.cumulative_regret());

    let params = BaselineParams { exploration: Some((pi_e.clone(), budget)), ridge_lambda: Some(1e-3) };
    for name in ["ridge-fqi-etc", "uniform-random", "oracle-optimal"] {
        let kind: BaselineKind = name.parse()?;
        let run = run_baseline(&mdp, kind, n, &params, &mut stream_from_seed(1), opts)?;
        println!("{:<16} {:>10.3}", name, run.cumulative_regret());
    }
    Ok(())
}
