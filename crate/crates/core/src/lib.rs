//! Unsupervised full-resolution pansharpening.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors with a reverse-mode gradient tape.
//! - [`raster`]: raster model, file I/O and fixed signal processing.
//! - [`metrics`]: correlation fields, UIQI, Q2ⁿ, ERGAS, Khan's D_λ and D_ρ.
//! - [`coreg`]: reference correlation field and per-band shift search.
//! - [`loss`]: the differentiable JESSE loss (spectral + spatial terms).
//! - [`model`]: the λ-PNN residual-attention network.
//! - [`adapt`]: target adaptation, pretraining and tile selection.
//! - [`report`]: the quality indices of a fused product.
//! - [`diagnostics`]: the finite-difference gradient suite.

// Index loops mirror the formulas; `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod coreg;
pub mod diagnostics;
pub mod metrics;
pub mod model;
pub mod error;
pub mod loss;
pub mod raster;
pub mod report;
pub mod tensor;

pub use error::{Error, Result};
