//! Generator inputs: categorical latent codes and Gaussian noise.

use c3gan_tensor::{Array, Real};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::rng::Rng;

/// One-hot categorical code of width `width` with its hot `index`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LatentCode {
    index: usize,
    width: usize,
}

impl LatentCode {
    pub fn new(index: usize, width: usize) -> Result<Self> {
        if index >= width {
            return Err(invalid(format!("code index {index} out of range for width {width}")));
        }
        Ok(Self { index, width })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn onehot(&self) -> Vec<u8> {
        (0..self.width).map(|i| u8::from(i == self.index)).collect()
    }
}

/// `[B, Y]` one-hot matrix of a batch of codes.
pub fn onehot_matrix<T: Real>(codes: &[LatentCode]) -> Array<T> {
    let y = codes.first().map_or(0, |c| c.width);
    let mut a = Array::zeros(&[codes.len(), y]);
    for (b, c) in codes.iter().enumerate() {
        assert_eq!(c.width, y, "mixed code widths in one batch");
        a.data_mut()[b * y + c.index] = T::one();
    }
    a
}

/// `B` codes with indices i.i.d. uniform on `[0, Y)`.
pub fn sample_latent(num_clusters: usize, batch: usize, rng: &mut Rng) -> Result<Vec<LatentCode>> {
    if num_clusters < 2 {
        return Err(invalid(format!("need at least 2 clusters, got {num_clusters}")));
    }
    if batch < 1 {
        return Err(invalid("batch size must be >= 1"));
    }
    Ok((0..batch).map(|_| LatentCode { index: rng.random_range(0..num_clusters), width: num_clusters }).collect())
}

/// `[B, d_z]` standard-normal noise.
pub fn sample_noise<T: Real>(d_z: usize, batch: usize, rng: &mut Rng) -> Result<Array<T>> {
    if d_z < 1 {
        return Err(invalid("noise dimension must be >= 1"));
    }
    Ok(Array::from_fn(&[batch, d_z], |_| T::c(rng.sample::<f64, _>(StandardNormal))))
}
