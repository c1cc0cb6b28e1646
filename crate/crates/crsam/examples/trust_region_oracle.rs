//! Exact worst-case loss increase on a ball (trust-region subproblem) versus
//! the one-step ascent estimate and a brute-force sphere search.
//!
//!     cargo run --release --example trust_region_oracle

use crsam::curvature::{exact_worst_case_quadratic, quadratic_gain};
use rand::{Rng, SeedableRng};
use rand_distr::Distribution;

fn main() -> crsam::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    println!("dim  rho    one-step     oracle       search(1e5)  AR(one-step)");
    for trial in 0..6 {
        let p = 2 + trial % 4;
        let mut a = vec![vec![0.0; p]; p];
        for i in 0..p {
            for j in 0..=i {
                let x = rng.gen_range(-2.0..2.0);
                a[i][j] = x;
                a[j][i] = x;
            }
        }
        let g: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rho = rng.gen_range(0.2..0.8);
        let sol = exact_worst_case_quadratic(&a, &g, rho)?;

        let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let one_step: Vec<f64> = g.iter().map(|x| rho * x / gn).collect();
        let one_gain = quadratic_gain(&a, &g, &one_step);

        let mut best = f64::NEG_INFINITY;
        for _ in 0..100_000 {
            let z: Vec<f64> = (0..p)
                .map(|_| rand_distr::StandardNormal.sample(&mut rng))
                .collect();
            let n = z.iter().map(|x| x * x).sum::<f64>().sqrt();
            let d: Vec<f64> = z.iter().map(|x| rho * x / n).collect();
            best = best.max(quadratic_gain(&a, &g, &d));
        }
        println!(
            "{p:>3}  {rho:.2}  {one_gain:>10.6}  {:>10.6}  {best:>11.6}  {:>11.4}",
            sol.max_increase,
            one_gain / sol.max_increase
        );
    }
    Ok(())
}
