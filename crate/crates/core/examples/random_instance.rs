//! Draws a random sparse linear MDP, validates it and prints (or saves) its
//! JSON form.
//!
//! cargo run --example random_instance -- [out.json]

use sparse_rl::linmdp::{make_random_sparse_mdp, validate_mdp};

fn main() -> sparse_rl::Result<()> {
    let mdp = make_random_sparse_mdp(3, 2, 6, 2, 3, 2024)?;
    let report = validate_mdp(&mdp);
    eprintln!(
        "states {} actions {:?} d {} active {:?} valid {}",
        mdp.num_states(),
        mdp.features().menu_sizes(),
        mdp.dim(),
        mdp.active_set(),
        report.is_valid()
    );
    match std::env::args().nth(1) {
        Some(path) => mdp.save(path)?,
        None => println!("{}", mdp.to_json()?),
    }
    Ok(())
}
