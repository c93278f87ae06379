use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// A 64-bit seed. Equal seeds and equal call sequences give equal streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Child seed keyed by `tags`; distinct tag paths give unrelated streams.
    pub fn derive(self, tags: &[u64]) -> Seed {
        let mut h = splitmix64(self.0 ^ 0x243f_6a88_85a3_08d3);
        for &t in tags {
            h = splitmix64(h ^ splitmix64(t.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        }
        Seed(h)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Standard normal entries, drawn row by row.
pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let values: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &values)
}

/// Uniform `[0, 1)` entries, drawn row by row.
pub fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let values: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
    DMatrix::from_row_slice(rows, cols, &values)
}

pub fn random_gaussian_matrix(rows: usize, cols: usize, seed: Seed) -> DMatrix<f64> {
    gaussian_matrix(&mut seed.rng(), rows, cols)
}

pub fn random_uniform_matrix(rows: usize, cols: usize, seed: Seed) -> DMatrix<f64> {
    uniform_matrix(&mut seed.rng(), rows, cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(random_gaussian_matrix(3, 4, Seed(9)), random_gaussian_matrix(3, 4, Seed(9)));
        assert_eq!(random_uniform_matrix(3, 4, Seed(9)), random_uniform_matrix(3, 4, Seed(9)));
        assert_ne!(random_gaussian_matrix(3, 4, Seed(9)), random_gaussian_matrix(3, 4, Seed(10)));
        assert_eq!(Seed(5).derive(&[1, 2]), Seed(5).derive(&[1, 2]));
        assert_ne!(Seed(5).derive(&[1, 2]), Seed(5).derive(&[2, 1]));
        assert_ne!(Seed(5).derive(&[1]), Seed(5).derive(&[1, 0]));
    }

    #[test]
    fn uniform_moments() {
        let m = random_uniform_matrix(100, 100, Seed(1));
        let mean = m.mean();
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
        assert!(m.iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn gaussian_moments() {
        let m = random_gaussian_matrix(100, 100, Seed(2));
        let mean = m.mean();
        let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m.len() - 1) as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
