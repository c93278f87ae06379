//! Dense matrix kernels shared by the CP and PARAFAC2 fitters.

mod assignment;
mod linalg;
mod nnls;
mod rng;

pub use assignment::max_weight_assignment;
pub use linalg::{orthogonal_procrustes, solve_lstsq, solve_normal, symmetric_pinv, thin_svd, Procrustes, ThinSvd};
pub use nnls::{nnls, nnls_gram, NnlsSolution};
pub use rng::{gaussian_matrix, random_gaussian_matrix, random_uniform_matrix, uniform_matrix, Seed};
