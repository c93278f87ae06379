//! CP (CANDECOMP/PARAFAC) fitting by alternating least squares.
//!
//! Each slice is modelled as `X_k ≈ A·diag(c_k)·Bᵀ`. A sweep updates `A`,
//! `B` and `C` in turn, each as the exact least-squares minimizer with the
//! other two fixed, so the loss trace never increases.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als;
use crate::error::{arg_err, Error, Result};
use crate::numerics::{gaussian_matrix, solve_normal, Seed};
use crate::tensor::{reconstruct_cp, DenseTensor3, FactorMatrix};

/// Relative loss below which a fit counts as exact and iteration stops.
pub const EXACT_FIT_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub rank: usize,
    pub max_iterations: usize,
    /// Stop once the relative loss change of a sweep falls below this.
    pub tol: f64,
    pub seed: Seed,
    pub n_starts: usize,
    /// Start 0 uses singular vectors of the data instead of Gaussian draws.
    pub svd_first_start: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            rank: 4,
            max_iterations: 2000,
            tol: 1e-8,
            seed: Seed(0),
            n_starts: 10,
            svd_first_start: true,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return arg_err("rank must be at least 1");
        }
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return arg_err(format!("tolerance must be positive, got {}", self.tol));
        }
        if self.n_starts == 0 {
            return arg_err("n_starts must be at least 1");
        }
        if self.max_iterations == 0 {
            return arg_err("max_iterations must be at least 1");
        }
        Ok(())
    }

    /// Seed of start `index`.
    pub fn start_seed(&self, index: usize) -> Seed {
        self.seed.derive(&[index as u64])
    }

    pub(crate) fn start_kind(&self, index: usize) -> Start {
        if index == 0 && self.svd_first_start {
            Start::Svd
        } else {
            Start::Gaussian
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Start {
    Gaussian,
    Svd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// `100·(1 − loss/‖X‖²)` of the returned model.
    pub fit: f64,
    /// Loss after every sweep.
    pub loss_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub seed: Seed,
    pub wall_time_secs: f64,
}

impl FitReport {
    /// Largest increase between consecutive trace entries (≤ 0 when monotone).
    pub fn max_loss_increase(&self) -> f64 {
        self.loss_trace
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpModel {
    pub a: FactorMatrix,
    pub b: FactorMatrix,
    pub c: FactorMatrix,
}

impl CpModel {
    pub fn rank(&self) -> usize {
        self.a.rank()
    }

    pub fn reconstruct(&self) -> Result<DenseTensor3> {
        reconstruct_cp(&self.a, &self.b, &self.c)
    }

    /// `B` repeated once per slice, for comparison against evolving factors.
    pub fn evolving_b(&self) -> Vec<DMatrix<f64>> {
        vec![self.b.as_matrix().clone(); self.c.rows()]
    }
}

/// One start of a multi-start fit.
#[derive(Debug, Clone)]
pub struct CpRun {
    pub model: CpModel,
    pub report: FitReport,
}

/// One ALS block update: the least-squares solution of
/// `factor · krᵀ ≈ unfolding`, i.e. `factor = unfolding · kr · (krᵀkr)⁺`.
pub fn cp_mode_update(unfolding: &DMatrix<f64>, kr: &DMatrix<f64>) -> Result<FactorMatrix> {
    if unfolding.ncols() != kr.nrows() {
        return arg_err(format!(
            "unfolding has {} columns but khatri-rao factor has {} rows",
            unfolding.ncols(),
            kr.nrows()
        ));
    }
    FactorMatrix::new(solve_normal(&(unfolding * kr), &(kr.transpose() * kr)))
}

/// Best-fit model over `opts.n_starts` random starts.
pub fn cp_als(t: &DenseTensor3, opts: &FitOptions) -> Result<(CpModel, FitReport)> {
    let runs = cp_als_runs(t, opts)?;
    let best = select_best(runs, |r| (r.report.fit, r.report.seed))
        .ok_or_else(|| Error::Numeric("every CP start failed".into()))?;
    Ok((best.model, best.report))
}

/// All successful starts, in start order.
pub fn cp_als_runs(t: &DenseTensor3, opts: &FitOptions) -> Result<Vec<CpRun>> {
    opts.validate()?;
    if t.squared_norm() == 0.0 {
        return arg_err("cannot fit an all-zero tensor");
    }
    let results: Vec<Result<CpRun>> = (0..opts.n_starts)
        .into_par_iter()
        .map(|s| match opts.start_kind(s) {
            Start::Gaussian => cp_als_single(t, opts, opts.start_seed(s)),
            Start::Svd => {
                let seed = opts.start_seed(s);
                let b = als::leading_vectors(t, false, opts.rank, seed);
                let c = DMatrix::from_element(t.dims().2, opts.rank, 1.0);
                let a = DMatrix::zeros(t.dims().0, opts.rank);
                cp_als_from(t, opts, (a, b, c), seed)
            }
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
        return Err(last_err.unwrap_or_else(|| Error::Numeric("no CP starts ran".into())));
    }
    Ok(runs)
}

/// Picks the highest fit; ties go to the lowest seed.
pub(crate) fn select_best<T, F>(runs: Vec<T>, key: F) -> Option<T>
where
    F: Fn(&T) -> (f64, Seed),
{
    runs.into_iter().reduce(|best, cand| {
        let (bf, bs) = key(&best);
        let (cf, cs) = key(&cand);
        if cf > bf || (cf == bf && cs < bs) {
            cand
        } else {
            best
        }
    })
}

/// A single ALS run from the Gaussian initialization drawn from `seed`.
pub fn cp_als_single(t: &DenseTensor3, opts: &FitOptions, seed: Seed) -> Result<CpRun> {
    let (ni, nj, nk) = t.dims();
    let r = opts.rank;
    let mut rng = seed.rng();
    let a = gaussian_matrix(&mut rng, ni, r);
    let b = gaussian_matrix(&mut rng, nj, r);
    let c = gaussian_matrix(&mut rng, nk, r);
    cp_als_from(t, opts, (a, b, c), seed)
}

/// A single ALS run from given `(A, B, C)`. The first sweep overwrites `A`,
/// so only `B` and `C` matter. `seed` is recorded in the report.
pub fn cp_als_from(
    t: &DenseTensor3,
    opts: &FitOptions,
    init: (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>),
    seed: Seed,
) -> Result<CpRun> {
    opts.validate()?;
    let start = Instant::now();
    let (ni, nj, nk) = t.dims();
    let r = opts.rank;
    let norm_sq = t.squared_norm();
    if norm_sq == 0.0 {
        return arg_err("cannot fit an all-zero tensor");
    }
    let (mut a, mut b, mut c) = init;
    if a.shape() != (ni, r) || b.shape() != (nj, r) || c.shape() != (nk, r) {
        return arg_err(format!(
            "initial factors A {:?}, B {:?}, C {:?} do not match rank {r} on a {:?} tensor",
            a.shape(),
            b.shape(),
            c.shape(),
            t.dims()
        ));
    }

    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        let m = als::mttkrp_first(t, &b, &c);
        a = solve_normal(&m, &als::gram_hadamard(&b, &c));

        let vs = als::slice_products(t, &a);
        b = solve_normal(&als::mttkrp_second(&vs, &c), &als::gram_hadamard(&a, &c));
        let m3 = als::mttkrp_third(&vs, &b);
        let gab = als::gram_hadamard(&a, &b);
        c = solve_normal(&m3, &gab);

        // ‖X − [A,B,C]‖² = ‖X‖² − 2⟨X₍₃₎(B⊙A), C⟩ + ⟨AᵀA∗BᵀB, CᵀC⟩
        let cross = m3.dot(&c);
        let model_sq = gab.dot(&(c.transpose() * &c));
        let loss = (norm_sq - 2.0 * cross + model_sq).max(0.0);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "CP-ALS diverged at iteration {} (seed {})",
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

    normalize_cp(&mut a, &mut b, &mut c);
    let loss = *trace.last().expect("at least one iteration");
    let report = FitReport {
        fit: 100.0 * (1.0 - loss / norm_sq),
        iterations: trace.len(),
        loss_trace: trace,
        converged,
        seed,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(CpRun {
        model: CpModel {
            a: FactorMatrix::new(a)?,
            b: FactorMatrix::new(b)?,
            c: FactorMatrix::new(c)?,
        },
        report,
    })
}

/// Unit-norm columns of `A` and `B`, scale into `C`; column sums of `C`
/// and `A` made nonnegative by paired sign flips.
fn normalize_cp(a: &mut DMatrix<f64>, b: &mut DMatrix<f64>, c: &mut DMatrix<f64>) {
    for r in 0..a.ncols() {
        for f in [&mut *a, &mut *b] {
            let n = f.column(r).norm();
            if n > 0.0 {
                f.column_mut(r).unscale_mut(n);
                c.column_mut(r).scale_mut(n);
            }
        }
        if c.column(r).sum() < 0.0 {
            c.column_mut(r).neg_mut();
            a.column_mut(r).neg_mut();
        }
        if a.column(r).sum() < 0.0 {
            a.column_mut(r).neg_mut();
            b.column_mut(r).neg_mut();
        }
    }
}
