//! HDR reconstruction from modulo (self-reset) sensor measurements.
//!
//! A modulo sensor folds scene radiance into `[0, 2^b)` instead of
//! saturating. This crate recovers the unfolded image from such
//! measurements under Gaussian read noise:
//!
//! * the sensor model itself ([`modulo`]) and synthetic scenes ([`scene`]),
//! * re-wrapped gradients and closed-form spectral solves ([`grad`],
//!   [`dct`], [`spectral`]),
//! * pluggable denoisers including a small residual CNN ([`denoise`]),
//! * classical integration, plug-and-play ADMM, and a trainable unrolled
//!   solver ([`solver`]),
//! * reverse-mode differentiation and the training loops ([`autodiff`],
//!   [`train`]),
//! * quality metrics and Reinhard tone mapping ([`metrics`], [`tonemap`]),
//! * PFM/PNG/weight-file I/O and the `modhdr` CLI ([`io`], [`cli`]).

pub mod autodiff;
pub mod cli;
pub mod dct;
pub mod denoise;
pub mod error;
pub mod grad;
pub mod image;
pub mod io;
pub mod metrics;
pub mod modulo;
pub mod scene;
pub mod solver;
pub mod spectral;
pub mod tonemap;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use grad::{divergence, forward_diff, wrapped_gradient, GradientField};
pub use image::{BitDepth, Image};
pub use modulo::{centered_mod, sense, standardize_bits, wrap, NoiseModel};
pub use scene::{synth_scene, SceneKind};
pub use spectral::{poisson_integrate, x_update, SpectralGrid};
