//! Semi-supervised training of image reconstruction networks supervised by
//! denoisers and denoising diffusion models (SUD2), together with an
//! analytic verification suite that certifies the underlying identities
//! (Tweedie's formula, the cross-entropy view of denoiser supervision, mode
//! collapse and mode shift, KL minimization) on Gaussian-mixture oracles.

#[macro_use]
pub mod error;

pub mod denoisers;
pub mod distributions;
pub mod image;
pub mod losses;
pub mod models;
pub mod rng;
pub mod tasks;
pub mod trainer;
pub mod verify;

pub use candle_core::Tensor;
pub use error::{Error, Result};
pub use image::Image;
pub use rng::Prng;
