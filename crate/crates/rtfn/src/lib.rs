//! Time-series classification and clustering toolkit built around a
//! dual-branch temporal feature network: a residual multi-scale convolution
//! branch for local features and an LSTM-driven attention branch for
//! position-to-position relationships, trained with RMSProp on a
//! self-contained f64 reverse-mode autodiff core.
//!
//! Everything is CPU-only, deterministic under a fixed seed, and small
//! enough to verify with finite-difference gradient checks (see
//! [`gradcheck`]). Start with the `examples/` directory for runnable
//! walkthroughs of each capability, or the `rtfn` binary for the
//! train/cluster/gradcheck/report commands.

pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod cluster;
pub mod data;
pub mod error;
pub mod gradcheck;
mod kernels;
pub mod layers;
pub mod lstm;
pub mod model;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Parameter, Tensor};

use std::sync::OnceLock;

/// Worker-thread cap, read once from `RTFN_THREADS`. Defaults to 1 so runs
/// are deterministic out of the box; parallel kernels split work only over
/// independent output elements, so any value reproduces the serial result
/// bit for bit.
pub fn threads() -> usize {
    static THREADS: OnceLock<usize> = OnceLock::new();
    *THREADS.get_or_init(|| {
        std::env::var("RTFN_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(1)
    })
}
