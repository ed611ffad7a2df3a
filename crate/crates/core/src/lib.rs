//! Flow-augmented implicit signed-distance shape model.
//!
//! The crate is `no_std` (it needs `alloc`) and carries every numerical piece
//! of the pipeline:
//!
//! - [`shape`]: procedural vehicle-like solids with exact analytic SDFs, surface
//!   sampling and training-pair generation.
//! - [`render`]: pinhole cameras, sphere-traced masks/depths and synthetic
//!   multi-frame observation bundles.
//! - [`decoder`]: the 8-layer auto-decoder `F(z, p) -> s` with analytical input
//!   Jacobians, parameter gradients and training.
//! - [`flow`]: the Gaussianization flow `G(w) -> z` (Householder rotations
//!   interleaved with logistic-mixture kernel layers) with inverse, log-det,
//!   Jacobian and maximum-likelihood training.
//! - [`observation`]: surface, silhouette and rendered-depth residuals with
//!   Jacobians over the 23-dimensional `(w, pose)` tangent.
//! - [`optimizer`]: the joint objective, damped Gauss-Newton, an Adam baseline
//!   and PCA pose initialisation.
//! - [`mesh`] and [`metrics`]: marching cubes, surface sampling, Chamfer
//!   distances, oriented boxes and 3D IoU.
//!
//! File formats, configuration, the experiment harness and the command line
//! live in the `nfsdf` companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adam;
pub mod decoder;
mod error;
pub mod flow;
pub mod geometry;
pub mod kdtree;
pub mod mesh;
pub mod metrics;
pub mod observation;
pub mod optimizer;
pub mod pose;
pub mod render;
pub mod shape;
pub mod special;

pub use error::{Error, Result};
pub use nalgebra;

/// Dimension of both the shape code `z` and the normalized code `w`.
pub const LATENT_DIM: usize = 16;

/// Dimension of the optimisation tangent: `w` (16), rotation (3),
/// translation (3) and log-scale (1).
pub const TANGENT_DIM: usize = LATENT_DIM + 7;

/// A 16-dimensional latent vector (either `z` or `w`).
pub type Code = nalgebra::SVector<f64, LATENT_DIM>;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
