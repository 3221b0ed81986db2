//! Sample-and-rank reconstruction of viewed images from voxel responses.
//!
//! The pipeline has four parts that mirror a Bayesian split of the problem:
//!
//! - [`decoder`]: a bidirectional LSTM that decodes a coarse category from
//!   the five-ROI voxel sequence.
//! - [`generator`]: a class-conditional image generator driven by a 120-D
//!   Gaussian latent. It supplies the image prior.
//! - [`encoder`]: ROI-wise convolutional regression from images to V1-V3
//!   voxels, trained with a weighted Pearson-correlation loss. It supplies
//!   the likelihood.
//! - [`reconstructor`]: calibrates predicted voxels against measured ones and
//!   ranks generated candidates by voxel-space MSE.
//!
//! [`numerics`] is the small hand-differentiated layer kit everything trains
//! through, [`data`] holds the image/voxel types, file formats and the
//! synthetic world, and [`metrics`] scores reconstructions in image space.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fsio;
pub mod generator;
pub mod metrics;
pub mod numerics;
pub mod presets;
pub mod reconstructor;

pub use error::{Error, Result};
