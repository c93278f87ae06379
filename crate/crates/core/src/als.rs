//! Slice-wise ALS kernels. Each MTTKRP here equals the corresponding
//! `unfold(mode) · khatri_rao(..)` product without materializing either.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::numerics::{gaussian_matrix, Seed};
use crate::tensor::{DenseTensor3, NeumaierSum};

/// Leading `r` left singular vectors of the mode-1 (`first = true`) or
/// mode-2 unfolding, from the eigenvectors of its Gram matrix. Columns the
/// unfolding cannot supply are Gaussian draws from `seed`.
pub(crate) fn leading_vectors(t: &DenseTensor3, first: bool, r: usize, seed: Seed) -> DMatrix<f64> {
    let (ni, nj, nk) = t.dims();
    let n = if first { ni } else { nj };
    let mut gram = DMatrix::zeros(n, n);
    for k in 0..nk {
        let xt = t.slice_transpose_view(k);
        if first {
            gram += xt.transpose() * xt;
        } else {
            gram += xt * xt.transpose();
        }
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let mut out = gaussian_matrix(&mut seed.rng(), n, r);
    for (col, &src) in order.iter().take(r).enumerate() {
        out.set_column(col, &eig.eigenvectors.column(src));
    }
    out
}

/// `X₍₁₎ (C ⊙ B)`, shape `I×R`.
pub(crate) fn mttkrp_first(t: &DenseTensor3, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let (ni, _, nk) = t.dims();
    let r = b.ncols();
    let mut out = DMatrix::zeros(ni, r);
    let mut w = DMatrix::zeros(ni, r);
    for k in 0..nk {
        t.slice_transpose_view(k).tr_mul_to(b, &mut w);
        for rr in 0..r {
            let ck = c[(k, rr)];
            out.column_mut(rr).axpy(ck, &w.column(rr), 1.0);
        }
    }
    out
}

/// `V_k = X_kᵀ A` for every slice, each `J×R`.
pub(crate) fn slice_products(t: &DenseTensor3, a: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    (0..t.dims().2)
        .map(|k| t.slice_transpose_view(k) * a)
        .collect()
}

/// `X₍₂₎ (C ⊙ A)` from precomputed `V_k`, shape `J×R`.
pub(crate) fn mttkrp_second(vs: &[DMatrix<f64>], c: &DMatrix<f64>) -> DMatrix<f64> {
    let (nj, r) = vs[0].shape();
    let mut out = DMatrix::zeros(nj, r);
    for (k, v) in vs.iter().enumerate() {
        for rr in 0..r {
            out.column_mut(rr).axpy(c[(k, rr)], &v.column(rr), 1.0);
        }
    }
    out
}

/// `X₍₃₎ (B ⊙ A)` from precomputed `V_k`, shape `K×R`.
pub(crate) fn mttkrp_third(vs: &[DMatrix<f64>], b: &DMatrix<f64>) -> DMatrix<f64> {
    let r = b.ncols();
    DMatrix::from_fn(vs.len(), r, |k, rr| vs[k].column(rr).dot(&b.column(rr)))
}

pub(crate) fn gram_hadamard(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    (x.transpose() * x).component_mul(&(y.transpose() * y))
}

/// `Σ_k ‖X_k − A·diag(c_k)·B_kᵀ‖²`, evaluated entrywise with compensated
/// summation so that traces stay monotone at round-off scale.
pub(crate) fn residual_sq<'a, F>(t: &DenseTensor3, a: &DMatrix<f64>, b_of: F, c: &DMatrix<f64>) -> f64
where
    F: Fn(usize) -> &'a DMatrix<f64>,
{
    let (ni, nj, nk) = t.dims();
    let at = a.transpose();
    let mut model_t = DMatrix::zeros(nj, ni);
    let mut acc = NeumaierSum::default();
    for k in 0..nk {
        let mut bc = b_of(k).clone();
        for rr in 0..bc.ncols() {
            bc.column_mut(rr).scale_mut(c[(k, rr)]);
        }
        bc.mul_to(&at, &mut model_t);
        // model_t is column-major J×I, i.e. the row-major layout of slice k.
        for (x, m) in t.slice_values(k).iter().zip(model_t.as_slice()) {
            let d = x - m;
            acc.add(d * d);
        }
    }
    acc.total()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{random_gaussian_matrix, Seed};
    use crate::tensor::{khatri_rao, reconstruct_cp};

    #[test]
    fn kernels_match_explicit_unfoldings() {
        let t = DenseTensor3::new((4, 5, 3), random_gaussian_matrix(60, 1, Seed(1)).as_slice().to_vec()).unwrap();
        let a = random_gaussian_matrix(4, 2, Seed(2));
        let b = random_gaussian_matrix(5, 2, Seed(3));
        let c = random_gaussian_matrix(3, 2, Seed(4));

        let m1 = t.unfold(1).unwrap() * khatri_rao(&c, &b).unwrap();
        assert!((mttkrp_first(&t, &b, &c) - m1).amax() < 1e-12);

        let vs = slice_products(&t, &a);
        let m2 = t.unfold(2).unwrap() * khatri_rao(&c, &a).unwrap();
        assert!((mttkrp_second(&vs, &c) - m2).amax() < 1e-12);

        let m3 = t.unfold(3).unwrap() * khatri_rao(&b, &a).unwrap();
        assert!((mttkrp_third(&vs, &b) - m3).amax() < 1e-12);

        let g = gram_hadamard(&b, &c);
        let kr = khatri_rao(&c, &b).unwrap();
        assert!((g - kr.transpose() * kr).amax() < 1e-12);
    }

    #[test]
    fn residual_matches_reconstruction() {
        let t = DenseTensor3::new((4, 5, 3), random_gaussian_matrix(60, 1, Seed(5)).as_slice().to_vec()).unwrap();
        let a = random_gaussian_matrix(4, 2, Seed(6));
        let b = random_gaussian_matrix(5, 2, Seed(7));
        let c = random_gaussian_matrix(3, 2, Seed(8));
        let rec = reconstruct_cp(&a, &b, &c).unwrap();
        let direct: f64 = t.values().iter().zip(rec.values()).map(|(x, y)| (x - y).powi(2)).sum();
        assert!((residual_sq(&t, &a, |_| &b, &c) - direct).abs() < 1e-10);
        assert!(residual_sq(&rec, &a, |_| &b, &c) < 1e-24);
    }
}
