//! Runs a seeded replicate sweep from a JSON config and fits the log-log
//! regret slope.
//!
//! cargo run --release --example regret_sweep -- examples/configs/quick_sweep.json

use sparse_rl::harness::{fit_regret_slope, run_experiment, ExperimentConfig};

fn main() -> sparse_rl::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/quick_sweep.json").to_string()
    });
    let config = ExperimentConfig::load(path)?;
    let outcome = run_experiment(&config)?;
    for p in &outcome.curve.points {
        println!("N = {:>6}  mean regret {:>10.3} ± {:.3}", p.n, p.mean, p.stderr);
    }
    let fit = fit_regret_slope(&outcome.curve)?;
    println!("slope {:.3} ± {:.3}", fit.slope, fit.half_width);
    Ok(())
}
