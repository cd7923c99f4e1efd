//! Dense row-major `f64` tensors.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// An n-dimensional array of `f64` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", format!("zero extent in shape {shape:?}")));
        }
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a 2-D tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::shape("tensor", "ragged rows"));
        }
        Tensor::new(&[n, m], rows.concat())
    }

    /// Centered uniform draws in `[-scale, scale)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Row `i` of a tensor viewed as `[shape[0], rest]`.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.data.len() / self.shape[0];
        &self.data[i * w..(i + 1) * w]
    }

    /// Gathers leading-axis slices into a new tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let w = self.data.len() / self.shape[0];
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            if i >= self.shape[0] {
                return Err(Error::shape("select_rows", format!("row {i} out of {}", self.shape[0])));
            }
            data.extend_from_slice(&self.data[i * w..(i + 1) * w]);
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Tensor::new(&shape, data)
    }
}

/// Draws a `batch x dim` tensor of i.i.d. standard normal values.
pub fn sample_noise<R: Rng + ?Sized>(batch: usize, dim: usize, rng: &mut R) -> Result<Tensor> {
    if batch == 0 || dim == 0 {
        return Err(Error::Precondition(format!(
            "noise batch and dim must be positive, got {batch}x{dim}"
        )));
    }
    let data = (0..batch * dim).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(&[batch, dim], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
        assert_eq!(Tensor::new(&[2, 3], vec![0.0; 6]).unwrap().len(), 6);
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let a = sample_noise(4, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_noise(4, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let c = sample_noise(4, 3, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_moments() {
        let t = sample_noise(1000, 100, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn empty_noise_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_noise(0, 3, &mut rng), Err(Error::Precondition(_))));
        assert!(matches!(sample_noise(3, 0, &mut rng), Err(Error::Precondition(_))));
    }
}
