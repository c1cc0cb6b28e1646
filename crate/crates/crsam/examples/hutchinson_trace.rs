//! Stochastic Hessian-trace estimation against a known trace.
//!
//!     cargo run --release --example hutchinson_trace

use crsam::curvature::{hutchinson_trace, ProbeKind};
use crsam::data::Batch;
use crsam::model::{Dtype, ModelSpec, ParamVector};
use rand::{Rng, SeedableRng};

fn main() -> crsam::Result<()> {
    let p = 12;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let mut matrix = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..=i {
            let x = rng.gen_range(-1.5..1.5);
            matrix[i][j] = x;
            matrix[j][i] = x;
        }
    }
    let exact: f64 = (0..p).map(|i| matrix[i][i]).sum();
    let spec = ModelSpec::quadratic(matrix, vec![0.0; p])?;
    let w = ParamVector::zeros(p, Dtype::F64);
    let batch = Batch::placeholder();

    println!("exact trace: {exact:.6}");
    println!("probes   gaussian estimate        rademacher estimate");
    for n in [10, 100, 1000, 10000] {
        let g = hutchinson_trace(&spec, &w, &batch, n, 1, ProbeKind::Gaussian)?;
        let r = hutchinson_trace(&spec, &w, &batch, n, 1, ProbeKind::Rademacher)?;
        println!(
            "{n:>6}   {:>8.4} +/- {:<8.4}  {:>8.4} +/- {:<8.4}",
            g.estimate, g.stderr, r.estimate, r.stderr
        );
    }

    // Rademacher probes on the identity give the dimension exactly.
    let spec = ModelSpec::quadratic_diag(&[1.0; 16]);
    let w = ParamVector::zeros(16, Dtype::F64);
    let t = hutchinson_trace(&spec, &w, &batch, 32, 0, ProbeKind::Rademacher)?;
    println!("\nidentity (dim 16), rademacher: {} +/- {} (exact)", t.estimate, t.stderr);
    Ok(())
}
