//! PARAFAC2 fitting by direct-fitting alternating least squares.
//!
//! Slices are modelled as `X_k ≈ A·diag(c_k)·B_kᵀ` with `B_k = P_k·H`,
//! `P_k` column-orthonormal. That parameterization satisfies the PARAFAC2
//! constraint `B_kᵀB_k = HᵀH` for every `k`.
//!
//! One sweep:
//! 1. `P_k ← procrustes(X_kᵀ·A·diag(c_k)·Hᵀ)` for every slice;
//! 2. `Y_k ← X_k·P_k`;
//! 3. one CP pass on the `I×R×K` tensor `Y` updating `A`, `H`, `C`
//!    (row-wise NNLS for `C` when non-negativity is on).
//!
//! Because `P_k` has orthonormal columns, `‖X_k − M_k P_kᵀ‖² = ‖X_k‖² −
//! ‖Y_k‖² + ‖Y_k − M_k‖²`, so step 3 minimizes the full loss for fixed `P_k`
//! and every step is an exact block minimizer.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::als;
use crate::cp::{select_best, FitOptions, Start, FitReport, EXACT_FIT_FLOOR};
use crate::error::{arg_err, Error, Result};
use crate::numerics::{gaussian_matrix, nnls_gram, orthogonal_procrustes, solve_normal, Seed};
use crate::tensor::{reconstruct_parafac2, DenseTensor3, FactorMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Parafac2Model {
    pub a: FactorMatrix,
    /// Common `R×R` factor.
    pub h: FactorMatrix,
    /// Orthonormal `J×R` projections, one per slice.
    pub p: Vec<DMatrix<f64>>,
    pub c: FactorMatrix,
}

impl Parafac2Model {
    pub fn rank(&self) -> usize {
        self.a.rank()
    }

    /// Evolving factors `B_k = P_k·H`.
    pub fn b_k(&self) -> Vec<DMatrix<f64>> {
        self.p.iter().map(|p| p * self.h.as_matrix()).collect()
    }

    pub fn reconstruct(&self) -> Result<DenseTensor3> {
        reconstruct_parafac2(&self.a, &self.b_k(), &self.c)
    }
}

#[derive(Debug, Clone)]
pub struct Parafac2Run {
    pub model: Parafac2Model,
    pub report: FitReport,
}

/// Best-fit PARAFAC2 model over `opts.n_starts` starts.
pub fn pf2_als(t: &DenseTensor3, opts: &FitOptions, nonneg_c: bool) -> Result<(Parafac2Model, FitReport)> {
    let runs = pf2_als_runs(t, opts, nonneg_c)?;
    let best = select_best(runs, |r| (r.report.fit, r.report.seed))
        .ok_or_else(|| Error::Numeric("every PARAFAC2 start failed".into()))?;
    Ok((best.model, best.report))
}

/// All successful starts, in start order.
pub fn pf2_als_runs(t: &DenseTensor3, opts: &FitOptions, nonneg_c: bool) -> Result<Vec<Parafac2Run>> {
    check_inputs(t, opts)?;
    let comp = Compressed::new(t, opts.rank);
    let results: Vec<Result<Parafac2Run>> = (0..opts.n_starts)
        .into_par_iter()
        .map(|s| {
            let seed = opts.start_seed(s);
            let init = match opts.start_kind(s) {
                Start::Gaussian => gaussian_init(t, opts.rank, seed),
                Start::Svd => svd_init(t, opts.rank, seed),
            };
            run_from(t, &comp, opts, nonneg_c, init, seed)
        })
        .collect();
    let mut runs = Vec::with_capacity(results.len());
    let mut last_err = None;
    for r in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => last_err = Some(e),
        }
    }
    if runs.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::Numeric("no PARAFAC2 starts ran".into())));
    }
    Ok(runs)
}

fn check_inputs(t: &DenseTensor3, opts: &FitOptions) -> Result<()> {
    opts.validate()?;
    let (_, nj, _) = t.dims();
    if opts.rank > nj {
        return arg_err(format!("PARAFAC2 rank {} exceeds J = {nj}", opts.rank));
    }
    if t.squared_norm() == 0.0 {
        return arg_err("cannot fit an all-zero tensor");
    }
    Ok(())
}

/// One start from Gaussian `A`, `H`, `C` drawn from `seed`.
pub fn pf2_als_single(t: &DenseTensor3, opts: &FitOptions, nonneg_c: bool, seed: Seed) -> Result<Parafac2Run> {
    check_inputs(t, opts)?;
    pf2_als_from(t, opts, nonneg_c, gaussian_init(t, opts.rank, seed), seed)
}

type Init = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

fn gaussian_init(t: &DenseTensor3, r: usize, seed: Seed) -> Init {
    let (ni, _, nk) = t.dims();
    let mut rng = seed.rng();
    let a = gaussian_matrix(&mut rng, ni, r);
    let h = gaussian_matrix(&mut rng, r, r);
    let c = gaussian_matrix(&mut rng, nk, r);
    (a, h, c)
}

/// `A` from the leading left singular vectors of the subject-mode
/// unfolding, `H = I`, `C` all ones.
fn svd_init(t: &DenseTensor3, r: usize, seed: Seed) -> Init {
    let a = als::leading_vectors(t, true, r, seed);
    (a, DMatrix::identity(r, r), DMatrix::from_element(t.dims().2, r, 1.0))
}

/// One start from given `(A, H, C)`; `seed` is only recorded in the report.
pub fn pf2_als_from(
    t: &DenseTensor3,
    opts: &FitOptions,
    nonneg_c: bool,
    init: Init,
    seed: Seed,
) -> Result<Parafac2Run> {
    check_inputs(t, opts)?;
    run_from(t, &Compressed::new(t, opts.rank), opts, nonneg_c, init, seed)
}

/// Slices `Z_k = X_k·Q_k` where `Q_k` is an orthonormal basis of the row
/// space of `X_k`. Every optimal `P_k` lies in that row space, so fitting
/// `Z_k` with projections `P̃_k` and mapping back through `P_k = Q_k·P̃_k`
/// gives the same iterates at a fraction of the cost when `I < J`.
struct Compressed {
    slices: DenseTensor3,
    bases: Option<Vec<DMatrix<f64>>>,
}

impl Compressed {
    fn new(t: &DenseTensor3, rank: usize) -> Self {
        let (ni, nj, nk) = t.dims();
        if ni >= nj || ni < rank {
            return Compressed { slices: t.clone(), bases: None };
        }
        let mut cores = Vec::with_capacity(nk);
        let mut bases = Vec::with_capacity(nk);
        for k in 0..nk {
            let qr = t.slice_transpose_view(k).clone_owned().qr();
            cores.push(qr.r().transpose());
            bases.push(qr.q());
        }
        let slices = DenseTensor3::from_slices(&cores).expect("cores of a finite tensor are finite");
        Compressed { slices, bases: Some(bases) }
    }

    fn expand(&self, p: Vec<DMatrix<f64>>) -> Vec<DMatrix<f64>> {
        match &self.bases {
            None => p,
            Some(q) => q.iter().zip(&p).map(|(qk, pk)| qk * pk).collect(),
        }
    }
}

fn run_from(
    t: &DenseTensor3,
    comp: &Compressed,
    opts: &FitOptions,
    nonneg_c: bool,
    init: Init,
    seed: Seed,
) -> Result<Parafac2Run> {
    let start = Instant::now();
    let (ni, _, nk) = t.dims();
    let r = opts.rank;
    let norm_sq = t.squared_norm();
    let (mut a, mut h, mut c) = init;
    if a.shape() != (ni, r) || h.shape() != (r, r) || c.shape() != (nk, r) {
        return arg_err(format!(
            "initial factors A {:?}, H {:?}, C {:?} do not match rank {r} on a {:?} tensor",
            a.shape(),
            h.shape(),
            c.shape(),
            t.dims()
        ));
    }
    let mut p = Vec::new();

    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        p = update_projections(&comp.slices, &a, &h, &c)?;
        let y = project_slices(&comp.slices, &p)?;

        a = solve_normal(&als::mttkrp_first(&y, &h, &c), &als::gram_hadamard(&h, &c));
        let vs = als::slice_products(&y, &a);
        h = solve_normal(&als::mttkrp_second(&vs, &c), &als::gram_hadamard(&a, &c));
        let mc = als::mttkrp_third(&vs, &h);
        let gc = als::gram_hadamard(&a, &h);
        c = if nonneg_c { nonneg_rows(&mc, &gc)? } else { solve_normal(&mc, &gc) };

        // ‖X_k − M_k·P_kᵀ‖² = ‖X_k‖² − ‖Y_k‖² + ‖Y_k − M_k‖² for orthonormal P_k.
        let loss = (norm_sq - y.squared_norm()).max(0.0) + als::residual_sq(&y, &a, |_| &h, &c);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "PARAFAC2-ALS diverged at iteration {} (seed {})",
                trace.len() + 1,
                seed.0
            )));
        }
        let prev = trace.last().copied();
        trace.push(loss);
        if loss <= EXACT_FIT_FLOOR * norm_sq {
            converged = true;
            break;
        }
        if let Some(prev) = prev {
            if ((prev - loss) / prev).abs() < opts.tol {
                converged = true;
                break;
            }
        }
    }

    normalize_pf2(&mut a, &mut h, &mut c);
    let loss = *trace.last().expect("at least one iteration");
    let report = FitReport {
        fit: 100.0 * (1.0 - loss / norm_sq),
        iterations: trace.len(),
        loss_trace: trace,
        converged,
        seed,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(Parafac2Run {
        model: Parafac2Model {
            a: FactorMatrix::new(a)?,
            h: FactorMatrix::new(h)?,
            p: comp.expand(p),
            c: FactorMatrix::new(c)?,
        },
        report,
    })
}

fn nonneg_rows(mttkrp: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut c = DMatrix::zeros(mttkrp.nrows(), mttkrp.ncols());
    for k in 0..mttkrp.nrows() {
        let f = DVector::from_iterator(mttkrp.ncols(), mttkrp.row(k).iter().copied());
        let sol = nnls_gram(gram, &f)?;
        c.row_mut(k).copy_from(&sol.x.transpose());
    }
    Ok(c)
}

/// `H` columns to unit norm (equivalently every `B_k` column), `A` columns
/// to unit norm, scale into `C`; then sign fixes so that `C` and `A` have
/// nonnegative column sums.
fn normalize_pf2(a: &mut DMatrix<f64>, h: &mut DMatrix<f64>, c: &mut DMatrix<f64>) {
    for r in 0..a.ncols() {
        for f in [&mut *h, &mut *a] {
            let n = f.column(r).norm();
            if n > 0.0 {
                f.column_mut(r).unscale_mut(n);
                c.column_mut(r).scale_mut(n);
            }
        }
        if c.column(r).sum() < 0.0 {
            c.column_mut(r).neg_mut();
            h.column_mut(r).neg_mut();
        }
        if a.column(r).sum() < 0.0 {
            a.column_mut(r).neg_mut();
            h.column_mut(r).neg_mut();
        }
    }
}

/// Procrustes step: `P_k = argmax trace(P_kᵀ·X_kᵀ·A·diag(c_k)·Hᵀ)`.
pub fn update_projections(
    t: &DenseTensor3,
    a: &DMatrix<f64>,
    h: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    let (ni, nj, nk) = t.dims();
    let r = a.ncols();
    if a.nrows() != ni || h.shape() != (r, r) || c.shape() != (nk, r) {
        return arg_err(format!(
            "projection update: A {:?}, H {:?}, C {:?} do not fit a {ni}x{nj}x{nk} tensor",
            a.shape(),
            h.shape(),
            c.shape()
        ));
    }
    let ht = h.transpose();
    (0..nk)
        .map(|k| {
            let mut ad = a.clone();
            for rr in 0..r {
                ad.column_mut(rr).scale_mut(c[(k, rr)]);
            }
            let f = t.slice_transpose_view(k) * (ad * &ht);
            Ok(orthogonal_procrustes(&f)?.p)
        })
        .collect()
}

/// `Y_k = X_k·P_k`, stacked into an `I×R×K` tensor.
pub fn project_slices(t: &DenseTensor3, p: &[DMatrix<f64>]) -> Result<DenseTensor3> {
    let (ni, nj, nk) = t.dims();
    if p.len() != nk {
        return arg_err(format!("expected {nk} projections, got {}", p.len()));
    }
    let r = p[0].ncols();
    let mut values = Vec::with_capacity(ni * r * nk);
    for (k, pk) in p.iter().enumerate() {
        if pk.shape() != (nj, r) {
            return arg_err(format!(
                "projection {k} has shape {:?}, expected {:?}",
                pk.shape(),
                (nj, r)
            ));
        }
        // (P_kᵀ X_kᵀ) is R×I column-major, i.e. Y_k row-major.
        let yt = pk.tr_mul(&t.slice_transpose_view(k));
        values.extend_from_slice(yt.as_slice());
    }
    DenseTensor3::new((ni, r, nk), values)
}

/// Worst pairwise violation of `B_{k1}ᵀB_{k1} = B_{k2}ᵀB_{k2}`, relative to
/// the mean cross-product norm.
pub fn pf2_constraint_gap<M: std::borrow::Borrow<DMatrix<f64>>>(bk: &[M]) -> f64 {
    let grams: Vec<DMatrix<f64>> = bk
        .iter()
        .map(|b| {
            let b = b.borrow();
            b.transpose() * b
        })
        .collect();
    if grams.is_empty() {
        return 0.0;
    }
    let mean = grams.iter().map(|g| g.norm()).sum::<f64>() / grams.len() as f64;
    if mean == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for i in 0..grams.len() {
        for j in i + 1..grams.len() {
            worst = worst.max((&grams[i] - &grams[j]).norm());
        }
    }
    worst / mean
}
