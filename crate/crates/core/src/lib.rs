//! Connectivity-aware path enforcement (CAPE) loss for distance-map
//! predictions of curvilinear structures.
//!
//! The loss samples vertex pairs from a ground-truth graph, finds the
//! corresponding minimum-cost path through the predicted distance map inside
//! a corridor around the ground-truth path, and charges the sum of squared
//! predicted distances along it. Gaps in the prediction therefore show up
//! as expensive paths, and the gradient lands on every cell of the path.
//!
//! Modules:
//! - [`grid`]: grids, exact distance transform, dilation, rasterization, CGRD I/O.
//! - [`gt_graph`]: geometric graphs, shortest paths, pair sampling, skeleton extraction.
//! - [`cape_loss`]: the loss loop, its gradient and the combined MSE objective.
//! - [`metrics`]: Dice, CCQ, APLS and TLTS.
//! - [`synth`]: synthetic curvilinear structures and gap corruption.
//! - [`optimize`]: finite-difference gradient checking and gap repair by descent.
//! - [`bridge`]: flat-buffer entry point for host-language bindings.

pub mod error;
pub mod grid;
pub mod gt_graph;
pub mod cape_loss;
pub mod metrics;
pub mod synth;
pub mod optimize;
pub mod bridge;

pub use error::{CapeError, Result};

#[cfg(test)]
mod test_support;
