//! Distributed reconstruction of heterogeneous signals from 1-bit
//! compressive measurements.
//!
//! Each node observes only the signs of noisy linear measurements of its
//! own signal; signals across nodes share direction up to a bounded
//! angle. Local quadratic losses are coupled by a squared-cosine
//! similarity penalty, solved through a rank-1 lifted relaxation with
//! projected gradient steps. A server exchanges one aggregate direction
//! per round with every node, so a round costs `2 m p` scalars.
//!
//! Crate layout:
//!
//! - [`model`]: domain types, the lift/extract/project maps, sufficient
//!   statistics, run configuration.
//! - [`datagen`]: synthetic scenarios, allocations, splits, CSV format.
//! - [`objective`]: both objective forms and all gradients.
//! - [`solver`]: round orchestration for the distributed and centralized
//!   solvers.
//! - [`baselines`]: separate and pooled least squares.
//! - [`tuning`]: warm-start regularization path.
//! - [`metrics`]: evaluation metrics and diagnostics.
//! - [`harness`]: wire format and transports with scalar accounting.
//! - [`diagnostics`]: packaged verification suites.
//! - [`cli`]: experiment driver behind the `dircs` binary.

pub mod baselines;
pub mod cli;
pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod rng;
pub mod solver;
pub mod tuning;

pub use error::{Error, Result};
pub use model::{
    build_stats, extract, lift, project, LiftedState, NodeDataset, NodeTruth, ProblemConfig,
    SignalVector,
};
