//! Core numerics for edit-aware multi-view denoising.
//!
//! The library models a six-view image grid evolving under a rectified-flow
//! ODE. Its centerpiece is an edit-propagation loop that transfers a 2D edit
//! made on a single condition view onto all six views of the grid: at each
//! descending time step the source and edited states are re-noised with
//! *shared* Gaussian noise, the velocity field is evaluated under the source
//! and target conditions (with classifier-free guidance), and the state is
//! advanced by the velocity *difference* — so everything the edit does not
//! touch cancels and is preserved.
//!
//! Crate layout:
//! - [`mvgrid`]: the 3x2 view-grid container, noise sampling, PNG round trips.
//! - [`schedule`]: descending time grids, the noising map, Euler updates.
//! - [`velocity`]: velocity-field models (analytic Gaussian oracle, affine
//!   toy model, a small trainable conv net) and classifier-free guidance.
//! - [`editor`]: the edit-propagation loop plus ablation variants and a
//!   naive re-noising baseline.
//! - [`synth`]: a tiny deterministic ray-traced scene generator that supplies
//!   multi-view training/eval data with ground-truth edits.
//! - [`trainer`]: deterministic flow-matching training for the conv net.
//! - [`metrics`]: edit-quality metrics (masked preservation, PSNR, edit
//!   direction agreement) and a benchmark harness over synthetic scenes.

pub mod editor;
pub mod error;
pub mod metrics;
pub mod mvgrid;
pub mod schedule;
pub mod synth;
pub mod trainer;
pub mod velocity;

pub use error::{Error, Result};
