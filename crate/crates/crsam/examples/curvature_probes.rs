//! Finite-difference curvature probes against their closed forms on a
//! quadratic model, where Theorem-1 differences carry zero truncation error.
//!
//!     cargo run --release --example curvature_probes

use crsam::curvature::{directional_grad_fd, hvp_fd, quadratic_form_fd};
use crsam::data::Batch;
use crsam::model::{ModelSpec, ParamVector};

fn main() -> crsam::Result<()> {
    // L(w) = 1/2 w'Aw with A = diag(1, 4); at w = (1, 1) the gradient is
    // (1, 4) and the Hessian is A itself.
    let spec = ModelSpec::quadratic_diag(&[1.0, 4.0]);
    let w = ParamVector::from_f64(vec![1.0, 1.0]);
    let batch = Batch::placeholder();

    println!("probe rho  v'grad (exact 4)      v'Hv (exact 4)");
    for rho in [1e-1, 1e-2, 1e-3, 1e-4] {
        let v = ParamVector::from_f64(vec![0.0, 1.0]);
        let d = directional_grad_fd(&spec, &w, &batch, &v, rho)?;
        let q = quadratic_form_fd(&spec, &w, &batch, &v, rho)?;
        println!("{rho:>9.0e}  {:>20.15}  {:>18.15}", d.value, q.value);
    }

    let hv = hvp_fd(&spec, &w, &batch, &ParamVector::from_f64(vec![1.0, 1.0]), 1e-4)?;
    println!("\nH * (1,1) = ({:.12}, {:.12})   (exact: 1, 4)", hv.as_slice()[0], hv.as_slice()[1]);
    Ok(())
}
