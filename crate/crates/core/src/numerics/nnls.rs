//! Lawson–Hanson active-set non-negative least squares.
//!
//! The driver is shared between the design-matrix form `min ‖M·x − y‖` and the
//! Gram form `min ½xᵀGx − fᵀx` (with `G = MᵀM`, `f = Mᵀy`) used for
//! row-wise updates inside ALS, where the Gram matrix is cheap to form.

use nalgebra::{DMatrix, DVector};

use super::linalg::solve_lstsq;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
}

trait Problem {
    fn n(&self) -> usize;
    /// `−∇ = Mᵀ(y − Mx)`.
    fn neg_gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Unconstrained minimizer over the passive variables (others fixed at 0).
    fn solve_passive(&self, passive: &[usize]) -> DVector<f64>;
    fn scale(&self) -> f64;
}

struct DesignForm<'a> {
    m: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
}

impl Problem for DesignForm<'_> {
    fn n(&self) -> usize {
        self.m.ncols()
    }

    fn neg_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.m.tr_mul(&(self.y - self.m * x))
    }

    fn solve_passive(&self, passive: &[usize]) -> DVector<f64> {
        let sub = self.m.select_columns(passive);
        let y = DMatrix::from_column_slice(self.y.len(), 1, self.y.as_slice());
        let sol = solve_lstsq(&sub, &y).expect("finite inputs checked up front");
        DVector::from_column_slice(sol.as_slice())
    }

    fn scale(&self) -> f64 {
        self.m.amax() * (self.m.amax() + self.y.amax())
    }
}

struct GramForm<'a> {
    g: &'a DMatrix<f64>,
    f: &'a DVector<f64>,
}

impl Problem for GramForm<'_> {
    fn n(&self) -> usize {
        self.g.ncols()
    }

    fn neg_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.f - self.g * x
    }

    fn solve_passive(&self, passive: &[usize]) -> DVector<f64> {
        let sub = self.g.select_rows(passive).select_columns(passive);
        let rhs = DMatrix::from_row_slice(
            1,
            passive.len(),
            &passive.iter().map(|&p| self.f[p]).collect::<Vec<_>>(),
        );
        let sol = super::linalg::solve_normal(&rhs, &sub);
        DVector::from_iterator(passive.len(), sol.iter().copied())
    }

    fn scale(&self) -> f64 {
        self.g.amax() + self.f.amax()
    }
}

/// `x ≥ 0` minimizing `‖M·x − y‖₂`.
pub fn nnls(m: &DMatrix<f64>, y: &DVector<f64>) -> Result<NnlsSolution> {
    if m.nrows() != y.len() {
        return Err(Error::Argument(format!(
            "nnls: M has {} rows but y has {} entries",
            m.nrows(),
            y.len()
        )));
    }
    if m.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("nnls input has non-finite entries".into()));
    }
    active_set(&DesignForm { m, y })
}

/// `x ≥ 0` minimizing `½xᵀGx − fᵀx` for symmetric PSD `G`.
pub fn nnls_gram(g: &DMatrix<f64>, f: &DVector<f64>) -> Result<NnlsSolution> {
    if g.nrows() != g.ncols() || g.nrows() != f.len() {
        return Err(Error::Argument(format!(
            "nnls_gram: G is {:?}, f has {} entries",
            g.shape(),
            f.len()
        )));
    }
    if g.iter().chain(f.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("nnls input has non-finite entries".into()));
    }
    active_set(&GramForm { g, f })
}

fn active_set(p: &dyn Problem) -> Result<NnlsSolution> {
    let n = p.n();
    let tol = 10.0 * f64::EPSILON * p.scale().max(f64::MIN_POSITIVE) * n as f64;
    let max_outer = 3 * n + 10;
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let mut blocked = vec![false; n];
    let mut iterations = 0;

    loop {
        let w = p.neg_gradient(&x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && !blocked[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(j) = candidate else { break };
        iterations += 1;
        if iterations > max_outer {
            return Err(Error::Numeric(format!(
                "nnls did not converge in {max_outer} outer iterations (n = {n})"
            )));
        }
        passive[j] = true;

        let mut first_inner = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let s_sub = p.solve_passive(&idx);
            let mut s = DVector::zeros(n);
            for (pos, &i) in idx.iter().enumerate() {
                s[i] = s_sub[pos];
            }

            if first_inner && s[j] <= 0.0 {
                // The new variable cannot enter; gradient sign was rounding noise.
                passive[j] = false;
                blocked[j] = true;
                break;
            }
            first_inner = false;

            if idx.iter().all(|&i| s[i] > 0.0) {
                x = s;
                blocked.iter_mut().for_each(|b| *b = false);
                break;
            }

            let mut alpha = 1.0;
            let mut hit = None;
            for &i in &idx {
                if s[i] <= 0.0 {
                    let denom = x[i] - s[i];
                    let a = if denom > 0.0 { x[i] / denom } else { 0.0 };
                    if a < alpha || hit.is_none() {
                        alpha = a.min(alpha);
                        hit = Some(i);
                    }
                }
            }
            x += (s - &x) * alpha;
            if let Some(h) = hit {
                x[h] = 0.0;
                passive[h] = false;
            }
            for &i in &idx {
                if x[i] <= 0.0 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&b| b) {
                break;
            }
        }
    }
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(NnlsSolution { x, iterations })
}
