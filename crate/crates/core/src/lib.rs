//! Calibrates relative monocular depth into metric depth by view synthesis,
//! fuses per-pixel semantics into a labelled voxel grid and scores the grid
//! with occupancy metrics. A synthetic scene generator supplies ground truth
//! for every stage.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod error;
pub mod geometry;
pub mod imgproc;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod semantics;
pub mod synthworld;
pub mod voxelfuse;

pub use error::{Error, Result};
