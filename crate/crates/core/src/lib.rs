//! Building blocks for activation-sparse transformer inference at desk scale.
//!
//! The crate is organized around the statistical top-k operator: a linear-time
//! approximate top-k that fits a Gaussian to the entries of an activation
//! vector and thresholds at `mean + std * Q(1 - k/d)`. On top of it sit
//! split-dimension FFN and attention layers whose low-cost predictors drive
//! sparse CPU kernels, plus a harness for Monte Carlo validation, sparsity
//! diagnostics, FLOPs accounting, and kernel microbenchmarks.
//!
//! Modules:
//! - [`tensor`]: dense vector/matrix containers and the reference (oracle)
//!   dense linear algebra every sparse kernel is tested against.
//! - [`topk`]: statistical top-k, its gradients, and the sharded variants.
//! - [`kernels`]: vector-masked matvec, tiled sparse vector-matrix multiply,
//!   and union-mask batching, with multiply-add/bytes accounting.
//! - [`layers`]: standard/gated/spark FFN and attention variants, RoPE on
//!   split dimensions, and FLOPs-per-token formulas.
//! - [`harness`]: tiny decoder assembly, theorem validation, distribution
//!   diagnostics, and benchmarks.

// Casts between `Real` and `f64` are no-ops on the default scalar but load-
// bearing under `scalar32`; `!(x > 0.0)` guards intentionally reject NaN.
#![allow(clippy::unnecessary_cast)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod kernels;
pub mod layers;
pub mod tensor;
pub mod topk;

/// Scalar type used throughout the crate. 64-bit by default; the `scalar32`
/// build option narrows it to `f32` (kernel paths only — accuracy contracts
/// are stated for 64-bit).
#[cfg(not(feature = "scalar32"))]
pub type Real = f64;
#[cfg(feature = "scalar32")]
pub type Real = f32;

pub use error::{Error, Result};
pub use tensor::{FillMode, FlopsReport, RealMatrix, RealVector, SparseActivation};
pub use topk::{Moments, TopkParams};
