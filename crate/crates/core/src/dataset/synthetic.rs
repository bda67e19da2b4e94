use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Isotropic unit-variance Gaussian clusters.
///
/// Class `c` is centred at `(sep / sqrt 2) * e_c`, so every pair of centres is
/// exactly `sep` apart. Labels are interleaved (`row % num_classes`), which
/// gives equal class sizes when `n` is a multiple of `num_classes`.
pub fn generate_blobs(n: usize, dim: usize, num_classes: usize, sep: f64, seed: u64) -> Result<Dataset> {
    if num_classes < 2 || n < num_classes {
        return Err(Error::invalid(format!(
            "need n >= C >= 2, got n={n} C={num_classes}"
        )));
    }
    if dim < num_classes {
        return Err(Error::invalid(format!(
            "equidistant centres need d >= C, got d={dim} C={num_classes}"
        )));
    }
    if !(sep >= 0.0) || !sep.is_finite() {
        return Err(Error::invalid(format!("cluster separation must be >= 0, got {sep}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = sep / std::f64::consts::SQRT_2;
    let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    let mut features = Matrix::zeros(n, dim);
    for i in 0..n {
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            features[(i, j)] = z + if j == labels[i] { offset } else { 0.0 };
        }
    }
    Dataset::new(features, labels, num_classes, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_sizes() {
        let ds = generate_blobs(600, 20, 3, 4.0, 1).unwrap();
        assert_eq!(ds.class_counts(), vec![200, 200, 200]);
    }

    #[test]
    fn seeded() {
        let a = generate_blobs(30, 4, 3, 2.0, 9).unwrap();
        let b = generate_blobs(30, 4, 3, 2.0, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_small_dim() {
        assert!(generate_blobs(30, 2, 3, 2.0, 9).is_err());
        assert!(generate_blobs(2, 4, 3, 2.0, 9).is_err());
    }
}
