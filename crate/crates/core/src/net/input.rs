use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Shape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputSource {
    RandomGaussian,
    File,
}

/// A batch of network inputs, `(N, channels, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBatch {
    pub data: Tensor,
    pub source: InputSource,
    pub seed: u64,
}

impl InputBatch {
    /// White-noise images with i.i.d. standard normal pixels.
    pub fn random_gaussian(n: usize, shape: Shape, seed: u64) -> Self {
        let (c, h, w) = shape;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * c * h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self {
            data: Tensor::from_vec(n, c, h, w, data),
            source: InputSource::RandomGaussian,
            seed,
        }
    }

    pub fn from_tensor(data: Tensor) -> Self {
        Self {
            data,
            source: InputSource::File,
            seed: 0,
        }
    }

    /// Validated constructor for externally supplied data.
    pub fn from_data(data: Tensor) -> Result<Self> {
        if data.n == 0 {
            return Err(Error::Empty("input batch"));
        }
        if !data.is_finite() {
            return Err(Error::InvalidArgument("input batch contains non-finite values".into()));
        }
        Ok(Self::from_tensor(data))
    }

    pub fn len(&self) -> usize {
        self.data.n
    }

    pub fn is_empty(&self) -> bool {
        self.data.n == 0
    }

    /// Rows `[start, end)` as a new batch.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let len = self.data.sample_len();
        let t = &self.data;
        Self {
            data: Tensor::from_vec(end - start, t.c, t.h, t.w, t.data[start * len..end * len].to_vec()),
            source: self.source,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_batch_is_reproducible() {
        let a = InputBatch::random_gaussian(4, (3, 8, 8), 64);
        let b = InputBatch::random_gaussian(4, (3, 8, 8), 64);
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.data.is_finite());
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(InputBatch::from_data(Tensor::zeros(0, 1, 1, 1)).is_err());
        let bad = Tensor::from_vec(1, 1, 1, 1, vec![f64::NAN]);
        assert!(InputBatch::from_data(bad).is_err());
    }
}
