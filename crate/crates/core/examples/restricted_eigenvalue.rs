//! Brackets the restricted eigenvalue of an empirical Gram matrix: the lower
//! end is the smallest eigenvalue, the upper end comes from cone search.

use rand::Rng;
use sparse_rl::linmdp::stream_from_seed;
use sparse_rl::sparsereg::{re_upper_enumerated, restricted_eigenvalue_estimate, symmetric_eigenvalues};

fn main() -> sparse_rl::Result<()> {
    let mut rng = stream_from_seed(11);
    let (n, d) = (40, 10);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let gram: Vec<Vec<f64>> = (0..d)
        .map(|a| (0..d).map(|b| x.iter().map(|r| r[a] * r[b]).sum::<f64>() / n as f64).collect())
        .collect();

    let eig = symmetric_eigenvalues(&gram)?;
    println!("eigenvalues {eig:.4?}");
    for s in 1..=3 {
        let iv = restricted_eigenvalue_estimate(&gram, s, 200, &mut rng)?;
        let exhaustive = re_upper_enumerated(&gram, s)?;
        println!("s = {s}: [{:.6}, {:.6}]  enumerated upper {exhaustive:.6}", iv.lower, iv.upper);
    }
    Ok(())
}
