//! Surface reconstruction by optimizing planar 3D Gaussians against analytic
//! test scenes, with a self-fused TSDF band prior.
//!
//! The engine renders depth maps from its own Gaussians, fuses them into a
//! truncated signed distance grid, and feeds that grid back into training as
//! a constraint: Gaussians far outside the band are removed, in-band Gaussians
//! are projected toward the zero level set, and a band-weighted opacity loss
//! pushes on-surface Gaussians opaque and off-surface ones transparent.
//!
//! Module map:
//! - [`geometry`] — Gaussian / camera primitives and projection
//! - [`raster`] — image containers shared by the renderer and I/O
//! - [`tsdf`] — grid fusion, trilinear sampling, gradients, update schedule
//! - [`constraints`] — band classification, removal, projection, opacity loss
//! - [`render`] — differentiable per-pixel ray-cast splatter and image losses
//! - [`optim`] — Adam, densification, and the training loop
//! - [`scene`] — analytic SDF scenes, ground-truth rendering, initialization
//! - [`eval`] — marching cubes, Chamfer-L1, PSNR
//! - [`io`] — PFM / PNG / PLY / grid / checkpoint / trace formats
//! - [`config`] — TOML run + scene configuration

pub mod config;
pub mod constraints;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod optim;
pub mod raster;
pub mod render;
pub mod scene;
pub mod tsdf;

pub use error::{Error, Result};
