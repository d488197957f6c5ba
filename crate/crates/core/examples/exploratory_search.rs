//! Brute-force search for the best-conditioned exploration policy over
//! deterministic policies and their pairwise mixtures. It evaluates the true
//! covariance, so it needs the transition kernel.

use sparse_rl::hardbench::find_exploratory_policy_bruteforce;
use sparse_rl::linmdp::{make_random_sparse_mdp, StationaryPolicy};

fn main() -> sparse_rl::Result<()> {
    let mdp = make_random_sparse_mdp(3, 2, 6, 6, 3, 4)?;
    let mut candidates = vec![StationaryPolicy::uniform(&mdp)];
    for code in 0..8usize {
        let actions: Vec<usize> = (0..3).map(|x| code >> x & 1).collect();
        candidates.push(StationaryPolicy::deterministic(&mdp, &actions)?);
    }
    let (best, sigma) = find_exploratory_policy_bruteforce(&mdp, &candidates, 10)?;
    println!("best sigma_min = {sigma:.6e}");
    for (x, row) in best.rows().iter().enumerate() {
        println!("pi(.|x{x}) = {row:.3?}");
    }
    Ok(())
}
