#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]
//! Euler–Maruyama approximation of SDEs with irregular coefficients.
//!
//! The crate simulates `dX = b(t, X) dt + σ(t, X) dW` where the drift may be
//! discontinuous (but one-sided Lipschitz) and the diffusion is Hölder
//! continuous and uniformly elliptic. Besides the three scheme variants it
//! ships the machinery used to check strong convergence rates empirically:
//!
//! - [`sde_model`]: problem definitions, preset catalog, assumption checks.
//! - [`brownian`]: counter-based Brownian increments on dyadic grids.
//! - [`em_scheme`]: standard, polygonal and mixed Euler–Maruyama schemes.
//! - [`yamada_watanabe`]: the smoothing functions `ψ`, `φ`, `Φ` and their properties.
//! - [`mollifier`]: Gaussian mollification and class-𝒜 condition checks.
//! - [`diagnostics`]: density envelopes, the discontinuity integral, Komatsu's inequality.
//! - [`rate_harness`]: coupled fine/coarse error estimation and rate regression.
//! - [`cli`]: configuration parsing and subcommand execution.
//!
//! Every Monte Carlo estimator is a pure function of its arguments and master
//! seed; results do not depend on the number of worker threads.

pub mod brownian;
pub mod cli;
pub mod diagnostics;
pub mod em_scheme;
pub mod error;
pub mod mollifier;
pub mod numerics;
pub mod parallel;
pub mod rate_harness;
pub mod sde_model;
pub mod yamada_watanabe;

pub use error::{Error, Result};
