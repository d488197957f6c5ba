//! One explore-then-commit run of Lasso fitted-Q iteration on a random sparse
//! MDP with distractor features.

use sparse_rl::agents::{choose_exploration_length, lasso_config_for, run_online_lasso_fqi, BudgetMode};
use sparse_rl::dp::expected_covariance;
use sparse_rl::linmdp::{make_random_sparse_mdp_with, Phase, RandomMdpOptions, StationaryPolicy};
use sparse_rl::sparsereg::LambdaMode;

fn main() -> sparse_rl::Result<()> {
    let mdp = make_random_sparse_mdp_with(20, 4, 60, 3, 3, 1, RandomMdpOptions { distractors: true })?;
    let pi_e = StationaryPolicy::uniform(&mdp);
    let c_min = expected_covariance(&mdp, &pi_e)?.sigma_min;
    println!("sigma_min of the uniform exploration policy: {c_min:.4e}");

    let n = 8192;
    let budget = choose_exploration_length(n, 3, mdp.dim(), 3, c_min, 0.1, BudgetMode::Rate { coefficient: 8.0 })?;
    let cfg = lasso_config_for(&budget, LambdaMode::FoldSize);
    let run = run_online_lasso_fqi(&mdp, &pi_e, n, &budget, &cfg, 42)?;

    println!("N1 = {} episodes ({} per fold), lambda = {:.4}", run.n1, run.episodes_per_fold, cfg.lambda);
    println!("explore regret {:.3}", run.phase_regret(Phase::Explore));
    println!("exploit regret {:.3}", run.phase_regret(Phase::Exploit));
    println!("total   regret {:.3}", run.cumulative_regret());
    if let Some(w) = &run.weights {
        let nnz: Vec<usize> = w.weights.iter().map(|v| v.iter().filter(|x| **x != 0.0).count()).collect();
        println!("nonzeros per step {nnz:?}, solver converged {}", run.converged);
    }
    Ok(())
}
