//! Burst image restoration by unrolled proximal gradient descent.
//!
//! A burst of misaligned, noisy (and possibly mosaicked) frames is modelled
//! as `y_i = H S_i x + n_i`. The latent image `x` is recovered by iterating
//! gradient steps on the data-fidelity term followed by a proximal map,
//! which is either a classical operator or a small residual CNN trained end
//! to end through the unrolled iterations.

pub mod align;
pub mod container;
pub mod error;
pub mod image;
pub mod ops;
pub mod proxnet;
pub mod real;
pub mod solver;
pub mod train;

pub use error::{Error, Result};
pub use image::{Burst, Image, PixelSpace};
