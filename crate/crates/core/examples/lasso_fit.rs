//! Recovers a 3-sparse vector from 200 noisy Rademacher measurements in
//! dimension 50 and checks the KKT certificate of the solution.

use rand::Rng;
use sparse_rl::linmdp::stream_from_seed;
use sparse_rl::sparsereg::{kkt_violation, lasso_fit, LassoConfig, RegressionDataset};

fn main() -> sparse_rl::Result<()> {
    let (n, d) = (200, 50);
    let mut rng = stream_from_seed(3);
    let mut truth = vec![0.0; d];
    truth[4] = 1.0;
    truth[17] = -0.5;
    truth[30] = 0.8;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect())
        .collect();
    let targets = rows
        .iter()
        .map(|r| r.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + 0.1 * rng.gen_range(-1.0..1.0))
        .collect();
    let data = RegressionDataset::new(rows, targets)?;

    for lambda in [0.3, 0.1, 0.03] {
        let fit = lasso_fit(&data, &LassoConfig::with_lambda(lambda))?;
        let support: Vec<usize> = (0..d).filter(|&j| fit.weights[j] != 0.0).collect();
        let err: f64 = fit.weights.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum();
        println!(
            "lambda {lambda:<5} support {support:?} l1 error {err:.4} kkt {:.1e} sweeps {}",
            kkt_violation(&data, &fit.weights, lambda),
            fit.sweeps
        );
    }
    Ok(())
}
