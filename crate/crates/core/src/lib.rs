//! Recovery of low-rank symmetric matrices from rank-one Gaussian
//! projections `y_i = x_iᵀ L x_i + e_i`.
//!
//! * [`matcore`]: symmetric containers, norms, eigen-truncation.
//! * [`sensing`]: the measurement ensemble, `A`, `A*`, observations.
//! * [`krylov`]: randomized block Krylov SVD, explicit and implicit.
//! * [`recover`]: the exact-projection and approximate-projection solvers.
//! * [`diag`]: Monte-Carlo probes of the statistical identities.
//! * [`rom1`]: the binary matrix file format.

pub mod diag;
pub mod error;
pub mod kernels;
pub mod krylov;
pub mod matcore;
pub mod recover;
pub mod rng;
pub mod rom1;
pub mod sensing;

pub use error::{Error, Result};
pub use krylov::{ImplicitGradient, KrylovParams};
pub use matcore::{LowRankFactors, Subspace, SymMatrix};
pub use sensing::{GroundTruth, Observations, RankOneEnsemble};
