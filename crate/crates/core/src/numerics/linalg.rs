use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin SVD `M = U·diag(S)·Vᵀ` with `S` sorted descending.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

/// Thin SVD via Householder QR followed by one-sided Jacobi on the
/// triangular factor. Singular vectors for numerically zero singular values
/// are completed to an orthonormal set.
pub fn thin_svd(m: &DMatrix<f64>) -> Result<ThinSvd> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("svd input has non-finite entries".into()));
    }
    if m.nrows() < m.ncols() {
        let t = thin_svd(&m.transpose())?;
        return Ok(ThinSvd { u: t.v, s: t.s, v: t.u });
    }
    let n = m.ncols();
    if n == 0 {
        return Ok(ThinSvd { u: DMatrix::zeros(m.nrows(), 0), s: Vec::new(), v: DMatrix::zeros(0, 0) });
    }
    let qr = m.clone().qr();
    let q = qr.q();
    let mut w = qr.r();
    let mut v = DMatrix::<f64>::identity(n, n);
    // Columns below this squared norm are numerically zero and left alone.
    let negligible = (f64::EPSILON * w.norm()).powi(2);
    let tol = n as f64 * f64::EPSILON;

    let mut sweeps = 0;
    loop {
        let mut rotated = false;
        for p in 0..n {
            for r in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(r).norm_squared();
                let gamma = w.column(p).dot(&w.column(r));
                if gamma == 0.0
                    || alpha.min(beta) <= negligible
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, r, c, s);
                rotate(&mut v, p, r, c, s);
            }
        }
        if !rotated {
            break;
        }
        sweeps += 1;
        if sweeps >= JACOBI_MAX_SWEEPS {
            return Err(Error::Numeric(format!(
                "svd of {}x{} matrix did not converge within {JACOBI_MAX_SWEEPS} sweeps",
                m.nrows(),
                n
            )));
        }
    }

    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let smax = norms[order[0]];
    let cutoff = smax * n as f64 * f64::EPSILON;

    let mut s = Vec::with_capacity(n);
    let mut ur = DMatrix::zeros(n, n);
    let mut vs = DMatrix::zeros(n, n);
    let mut filled = 0;
    for (dst, &src) in order.iter().enumerate() {
        s.push(norms[src]);
        vs.set_column(dst, &v.column(src));
        if norms[src] > cutoff {
            ur.set_column(dst, &(w.column(src) / norms[src]));
            filled += 1;
        }
    }
    complete_orthonormal(&mut ur, filled);
    Ok(ThinSvd { u: q * ur, s, v: vs })
}

fn rotate(m: &mut DMatrix<f64>, p: usize, r: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let x = m[(i, p)];
        let y = m[(i, r)];
        m[(i, p)] = c * x - s * y;
        m[(i, r)] = s * x + c * y;
    }
}

/// Fills columns `filled..` of a square matrix whose leading columns are
/// orthonormal, using Gram–Schmidt on the best-conditioned unit vector.
fn complete_orthonormal(u: &mut DMatrix<f64>, filled: usize) {
    let n = u.nrows();
    for col in filled..u.ncols() {
        let residual = |e: usize| {
            let mut x = DVector::zeros(n);
            x[e] = 1.0;
            for _ in 0..2 {
                for j in 0..col {
                    let d = u.column(j).dot(&x);
                    x.axpy(-d, &u.column(j), 1.0);
                }
            }
            x
        };
        let best = (0..n)
            .map(residual)
            .max_by(|x, y| x.norm().total_cmp(&y.norm()))
            .expect("square matrix has rows");
        let nb = best.norm();
        u.set_column(col, &(best / nb));
    }
}

/// Column-orthonormal maximizer of `trace(Pᵀ·F)`.
#[derive(Debug, Clone)]
pub struct Procrustes {
    pub p: DMatrix<f64>,
    /// Set when `F` is numerically rank deficient; `p` is then one of
    /// several maximizers.
    pub degenerate: bool,
}

/// `P = U·Vᵀ` from the thin SVD of `F` (n×r, n ≥ r).
pub fn orthogonal_procrustes(f: &DMatrix<f64>) -> Result<Procrustes> {
    if f.nrows() < f.ncols() {
        return Err(Error::Argument(format!(
            "procrustes needs rows >= cols, got {}x{}",
            f.nrows(),
            f.ncols()
        )));
    }
    let svd = thin_svd(f)?;
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let cutoff = smax * f.nrows().max(f.ncols()) as f64 * f64::EPSILON;
    let degenerate = smax == 0.0 || svd.s.iter().any(|&s| s <= cutoff);
    Ok(Procrustes {
        p: &svd.u * svd.v.transpose(),
        degenerate,
    })
}

/// Moore–Penrose inverse of a symmetric positive semidefinite matrix.
pub fn symmetric_pinv(g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let sym = (g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let cutoff = lmax * n as f64 * f64::EPSILON;
    let mut out = DMatrix::zeros(n, n);
    for (idx, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cutoff {
            let v = eig.eigenvectors.column(idx);
            out += (v * v.transpose()) / l;
        }
    }
    out
}

/// Solves the normal equations `X·G = F` for `X` with `G` symmetric PSD,
/// taking the minimum-norm solution when `G` is singular. This is the
/// least-squares block update `X = F·G⁺` used throughout ALS.
pub fn solve_normal(rhs: &DMatrix<f64>, gram: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = gram.clone().cholesky() {
        let diag_min = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, &d| m.min(d));
        let diag_max = chol.l_dirty().diagonal().iter().fold(0.0f64, |m, &d| m.max(d));
        // Cholesky is fine when the factor is comfortably non-singular.
        if diag_min > diag_max * 1e-7 {
            return chol.solve(&rhs.transpose()).transpose();
        }
    }
    rhs * symmetric_pinv(gram)
}

/// Minimum-norm solution of `min ‖M·X − Y‖_F`.
pub fn solve_lstsq(m: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != y.nrows() {
        return Err(Error::Argument(format!(
            "lstsq row mismatch: M has {}, Y has {}",
            m.nrows(),
            y.nrows()
        )));
    }
    let svd = thin_svd(m)?;
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let cutoff = smax * m.nrows().max(m.ncols()) as f64 * f64::EPSILON;
    let uty = svd.u.transpose() * y;
    let mut scaled = DMatrix::zeros(svd.s.len(), y.ncols());
    for (row, &s) in svd.s.iter().enumerate() {
        if s > cutoff {
            for col in 0..y.ncols() {
                scaled[(row, col)] = uty[(row, col)] / s;
            }
        }
    }
    Ok(&svd.v * scaled)
}
