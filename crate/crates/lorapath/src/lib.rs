//! Cost-optimal computation graphs for low-rank adapted linear layers.
//!
//! A linear layer with a low-rank adapter (`Y = X W + (X A) B`) admits several
//! mathematically equivalent bracketings of its forward and backward product
//! chains. They differ only in FLOPs and workspace, and the cheapest one
//! depends on the layer geometry. This crate provides:
//!
//! - [`dense`]: a small deterministic matrix kernel with transpose flags and
//!   an executed-FLOP tally;
//! - [`costmodel`]: exact integer FLOP formulas for every variant, workspace
//!   and activation-memory accounting, and the baseline execution cost;
//! - [`variants`]: the executable bracketings, an analytic reference
//!   backward, and finite-difference gradient checking;
//! - [`selector`]: per-shape and per-model choice of the cheapest pair, by
//!   FLOPs or by measured time;
//! - [`bench`]: a warmup/repeat timing harness with baseline comparison;
//! - [`mapgen`]: CSV area maps of the best variant over geometry grids.

pub mod bench;
pub mod costmodel;
pub mod dense;
pub mod error;
pub mod mapgen;
pub mod selector;
pub mod variants;

pub use costmodel::{
    BackwardVariant, BaselineCosts, CostReport, ForwardVariant, ShapeConfig, VariantId,
};
pub use dense::{Matrix, Scalar};
pub use error::{Error, Result};
pub use selector::{Criterion, PairPlan};
pub use variants::{Gradients, LoraLayer};
