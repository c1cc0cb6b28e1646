//! Desk-scale training laboratory for sharpness-aware optimizers and the
//! curvature diagnostics behind them.
//!
//! The lab implements three optimizers over flat parameter vectors — SGD
//! with momentum, SAM (one-step ascent approximation of the worst-case
//! rho-ball loss), and CR-SAM (SAM plus a finite-difference curvature
//! regularizer `alpha log d2 + beta log d1` probed along the gradient
//! direction) — together with the measurement tools needed to study them:
//!
//! - [`curvature`]: central-difference probes for `v'grad` and `v'Hv`,
//!   FD Hessian-vector products, Hutchinson trace estimation, power-iteration
//!   top eigenvalue, the normalized Hessian trace `Tr(H)/||grad||`, the
//!   sharpness approximation ratio, and an exact trust-region oracle on
//!   quadratics.
//! - [`model`]: analytic quadratics (the oracle workhorse), linear-softmax,
//!   and dense MLPs with hand-rolled reverse-mode gradients.
//! - [`optim`]: the three step rules plus the cosine learning-rate schedule.
//! - [`data`]: deterministic synthetic generators (two-moons, blobs, spiral),
//!   an IDX reader/writer compatible with MNIST files, and seeded batching.
//! - [`harness`]: declarative run configs, the training loop, checkpoints,
//!   landscape grids, and CSV/JSON artifacts.
//! - [`selfcheck`]: the analytic-oracle suite behind `crsam selfcheck`.
//!
//! Everything is deterministic given explicit seeds: re-running a config
//! reproduces its metrics bit-for-bit (wall-clock telemetry aside), and
//! CR-SAM's paired probe evaluations give identical results whether they run
//! serially or concurrently.
//!
//! The `examples/` directory is the best starting point; each example
//! exercises one capability end to end. The `crsam` binary exposes the same
//! operations as subcommands (`train`, `geometry`, `landscape`, `ar`,
//! `gen-data`, `selfcheck`).

pub mod cli;
pub mod curvature;
pub mod data;
mod dd;
pub mod error;
pub mod harness;
pub mod model;
pub mod optim;
pub mod selfcheck;

pub use error::{Error, Result};

pub(crate) mod seeds {
    /// SplitMix64-style seed derivation: independent deterministic streams
    /// from one base seed.
    pub fn derive_seed(base: u64, salt: u64) -> u64 {
        let mut z = base
            .wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(salt.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}
