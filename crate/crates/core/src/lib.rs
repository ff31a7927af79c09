//! Distributionally diverse (DD) risk for binary classifiers on the unit
//! square: the worst-case risk over test distributions whose entropy is
//! within `γ` of uniform.
//!
//! The crate covers the closed form for a known error volume, the analytic
//! upper bound, a greedy adversary that estimates DD risk from samples, and
//! the training side: synthetic tasks, density estimation, inverse-density
//! rebalancing and a small MLP. [`harness`] ties these into seeded sweeps.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod bounds;
pub mod density;
pub mod domain;
pub mod entropy;
pub mod error;
mod gauss;
pub mod harness;
pub mod learner;
pub mod rebalance;
pub mod rng;
pub mod tasks;

pub use domain::{bin_index, zero_one_loss, BinGrid, Classifier, Dataset, Label, LabeledSample, Point2};
pub use error::{Error, Result};
