//! Desk-scale laboratory for studying how LayerNorm affects learning and
//! label memorization in Pre-LN and Post-LN transformers.
//!
//! The crate is layered bottom-up:
//!
//! - [`numerics`]: dense tensors, a reverse-mode gradient graph, dual numbers
//!   for forward-mode directional derivatives, and matrix-free spectral norms.
//! - [`model`]: LayerNorm, multi-head self-attention, feed-forward sub-layers,
//!   Pre-LN / Post-LN block wiring, affine ablation and checkpoints.
//! - [`data`]: synthetic motif-classification corpora, CSV ingestion,
//!   noisy-label injection and stratified splits.
//! - [`train`]: Adam and the train-until-memorized loop.
//! - [`metrics`]: memorization / recovery / random-prediction scores.
//! - [`analysis`]: per-LN-site gradient norms and group ablation sweeps.
//! - [`bounds`]: numerical evaluation of the LN-input gradient upper bounds.

pub mod analysis;
pub mod bounds;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};
