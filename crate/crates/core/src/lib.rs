//! Unsupervised fine-grained clustering with a compositional GAN.
//!
//! The generator factors each image into a background, a foreground mask
//! and a foreground texture, conditioned on a categorical latent code. The
//! discriminator embeds images next to one centroid per code; its cosine
//! posterior over centroids is both a training target and the clustering
//! rule at inference time.

pub mod config;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod generator;
pub mod losses;
pub mod nn;
pub mod perturb;
pub mod rng;
pub mod sampling;
pub mod trainer;

pub use c3gan_tensor as tensor;
pub use c3gan_tensor::par;
pub use config::{LossWeights, RunConfig};
pub use error::{Error, Result};
pub use rng::Rng;
