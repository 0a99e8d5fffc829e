//! Small synthetic distributions used by convergence checks and benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

/// `n` points from `modes` isotropic Gaussians evenly spaced on a circle.
/// Point `i` belongs to mode `i % modes`.
pub fn gaussian_ring(n: usize, modes: usize, radius: f64, std: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    for i in 0..n {
        let a = (i % modes) as f64 * std::f64::consts::TAU / modes as f64;
        let (dx, dy): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        data.push(radius * a.cos() + std * dx);
        data.push(radius * a.sin() + std * dy);
    }
    Tensor::new(vec![n, 2], data).expect("shape")
}

/// The ring used by the convergence checks: 8 modes, radius 0.7, std 0.05.
pub fn ring8(n: usize, seed: u64) -> Tensor {
    gaussian_ring(n, 8, 0.7, 0.05, seed)
}

/// Two Gaussian blobs at `(-0.5, 0)` and `(0.5, 0)`, std 0.1.
pub fn two_modes(n: usize, seed: u64) -> Tensor {
    gaussian_ring(n, 2, 0.5, 0.1, seed)
}

/// Uniform noise on `[-1, 1]^d`.
pub fn uniform(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![n, d], (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_modes_sit_on_circle() {
        let x = gaussian_ring(800, 8, 0.7, 0.0, 1);
        for r in x.iter_rows() {
            assert!(((r[0] * r[0] + r[1] * r[1]).sqrt() - 0.7).abs() < 1e-12);
        }
        assert_eq!(ring8(10, 3), ring8(10, 3));
    }
}
