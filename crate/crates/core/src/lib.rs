//! Right-ventricle segmentation on short-axis slice stacks.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]), the
//! FCNN / R-FCNN generators and mask discriminators built on it ([`nn`]), the
//! supervised and adversarial losses ([`losses`]), plain, GAN and ROI-GAN
//! training loops ([`train`]), a synthetic phantom dataset ([`data`]) and the
//! Dice / Hausdorff evaluation ([`metrics`]).

mod bin;
pub mod checks;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
