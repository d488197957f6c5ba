//! Builds a hard instance, plays uniformly at random until the needle action
//! is found, then picks the alternative direction and measures the KL
//! divergence of the two trajectory laws.

use sparse_rl::agents::{run_baseline, BaselineKind, BaselineParams, RunOptions};
use sparse_rl::dp::{expected_covariance, optimal_values};
use sparse_rl::hardbench::{
    build_alternative_instance, build_hard_instance, canonical_epsilon, exploratory_policy_for,
    hard_run_diagnostics, select_z_tilde, stepwise_kl, X0,
};
use sparse_rl::linmdp::{stream_from_seed, validate_mdp};

fn main() -> sparse_rl::Result<()> {
    let (d, s, k, horizon) = (16, 3, 5, 3);
    let inst = build_hard_instance(d, s, k, canonical_epsilon(s), 64, 1)?;
    let mdp = inst.to_mdp(horizon)?;
    println!("dim {} sparsity {} valid {}", mdp.dim(), mdp.sparsity(), validate_mdp(&mdp).is_valid());
    println!("V*_1(x0) = {:.6}", optimal_values(&mdp).initial_value(X0));

    let pi_e = exploratory_policy_for(&inst)?;
    let cov = expected_covariance(&mdp, &pi_e)?;
    println!("sigma_min(Sigma^pi_e) = {:.3e}", cov.sigma_min);

    let n = d;
    let opts = RunOptions { keep_trajectories: true };
    let run = run_baseline(&mdp, BaselineKind::UniformRandom, n, &BaselineParams::default(), &mut stream_from_seed(2), opts)?;
    let diag = hard_run_diagnostics(&run.trajectories, &inst, n);
    println!("tau = {}, D_k = {}, visitation sum = {}", diag.tau, diag.event_d, diag.visitation_sum);

    let z = select_z_tilde(&inst, &diag.visits)?;
    let alt = build_alternative_instance(&inst, &z)?;
    let kl = stepwise_kl(&inst, &alt, std::slice::from_ref(&diag.visits))?;
    println!("z_tilde support {:?}", (0..d).filter(|&j| z[j] != 0.0).collect::<Vec<_>>());
    println!("KL = {:.4e}, bound 8 eps^2 (s-1)^2 = {:.4e}", kl.total, kl.bound);
    Ok(())
}
