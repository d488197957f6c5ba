//! Exact backward induction on a small random instance: optimal values,
//! evaluation of the uniform policy, occupancy and feature covariance.

use sparse_rl::dp::{expected_covariance, occupancy_frequencies, optimal_values, policy_values};
use sparse_rl::linmdp::{make_random_sparse_mdp, StationaryPolicy};

fn main() -> sparse_rl::Result<()> {
    let mdp = make_random_sparse_mdp(4, 3, 10, 3, 4, 7)?;
    let opt = optimal_values(&mdp);
    let uniform = StationaryPolicy::uniform(&mdp);
    let uni = policy_values(&mdp, &uniform)?;
    println!("V*_1   = {:.6}", opt.expected_initial_value(mdp.initial()));
    println!("V^u_1  = {:.6}", uni.expected_initial_value(mdp.initial()));

    let mu = occupancy_frequencies(&mdp, &uniform)?;
    for (x, row) in mu.iter().enumerate() {
        println!("mu(x{x}, .) = {row:.4?}");
    }
    let cov = expected_covariance(&mdp, &uniform)?;
    println!("sigma_min(Sigma^u) = {:.6e}", cov.sigma_min);

    opt.write_csv(std::io::stdout())?;
    Ok(())
}
