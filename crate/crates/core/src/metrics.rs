//! Recovery and group-difference metrics: fit, factor match scores,
//! clustering accuracy, two-sample t-tests and run-uniqueness checks.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{arg_err, Result};
use crate::numerics::{max_weight_assignment, Seed};
use crate::tensor::{DenseTensor3, NeumaierSum};

/// `100·(1 − ‖X − X̂‖²/‖X‖²)`.
pub fn fit_score(x: &DenseTensor3, xhat: &DenseTensor3) -> Result<f64> {
    if x.dims() != xhat.dims() {
        return arg_err(format!("fit_score dims differ: {:?} vs {:?}", x.dims(), xhat.dims()));
    }
    let norm_sq = x.squared_norm();
    if norm_sq == 0.0 {
        return arg_err("fit_score of an all-zero tensor is undefined");
    }
    let mut acc = NeumaierSum::default();
    for (a, b) in x.values().iter().zip(xhat.values()) {
        let d = a - b;
        acc.add(d * d);
    }
    Ok(100.0 * (1.0 - acc.total() / norm_sq))
}

/// Estimated component `perm[r]` is matched to true component `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentMatching {
    pub perm: Vec<usize>,
    /// Per true component, the product over modes of absolute congruences.
    pub scores: Vec<f64>,
}

impl ComponentMatching {
    pub fn identity(r: usize) -> Self {
        ComponentMatching {
            perm: (0..r).collect(),
            scores: vec![1.0; r],
        }
    }
}

/// `|uᵀv| / (‖u‖·‖v‖)`, zero when either column vanishes.
fn congruence(u: nalgebra::DVectorView<f64>, v: nalgebra::DVectorView<f64>) -> f64 {
    let d = u.norm() * v.norm();
    if d == 0.0 {
        0.0
    } else {
        (u.dot(&v) / d).abs()
    }
}

fn column_congruences(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(u.ncols(), v.ncols(), |i, j| congruence(u.column(i), v.column(j)))
}

/// Permutation maximizing the summed product of per-mode congruences.
pub fn match_components(truth: &[&DMatrix<f64>], est: &[&DMatrix<f64>]) -> Result<ComponentMatching> {
    if truth.is_empty() || truth.len() != est.len() {
        return arg_err(format!("need equal, non-zero mode counts, got {} and {}", truth.len(), est.len()));
    }
    let r = truth[0].ncols();
    for (t, e) in truth.iter().zip(est) {
        if t.ncols() != r || e.ncols() != r {
            return arg_err(format!("rank mismatch: truth {} vs estimate {}", t.ncols(), e.ncols()));
        }
        if t.nrows() != e.nrows() {
            return arg_err(format!("row mismatch: truth {} vs estimate {}", t.nrows(), e.nrows()));
        }
    }
    let mut w = DMatrix::from_element(r, r, 1.0);
    for (t, e) in truth.iter().zip(est) {
        w.component_mul_assign(&column_congruences(t, e));
    }
    let perm = max_weight_assignment(&w);
    let scores = perm.iter().enumerate().map(|(i, &j)| w[(i, j)]).collect();
    Ok(ComponentMatching { perm, scores })
}

/// Mean absolute congruence between true columns and their matched
/// estimated columns.
pub fn fms(u: &DMatrix<f64>, uhat: &DMatrix<f64>, m: &ComponentMatching) -> Result<f64> {
    if u.shape() != uhat.shape() || m.perm.len() != u.ncols() {
        return arg_err(format!(
            "fms shapes differ: {:?} vs {:?} with {} matched components",
            u.shape(),
            uhat.shape(),
            m.perm.len()
        ));
    }
    let mut total = 0.0;
    for (r, &e) in m.perm.iter().enumerate() {
        let (a, b) = (u.column(r), uhat.column(e));
        if a.norm() == 0.0 || b.norm() == 0.0 {
            return arg_err(format!("fms: component {} has a zero column", r + 1));
        }
        total += congruence(a, b);
    }
    Ok(total / u.ncols() as f64)
}

/// Windows stacked vertically into one `(J·K)×R` matrix.
pub fn stack_windows<M: std::borrow::Borrow<DMatrix<f64>>>(bk: &[M]) -> Result<DMatrix<f64>> {
    let Some(first) = bk.first() else {
        return arg_err("no windows to stack");
    };
    let (nj, r) = first.borrow().shape();
    let mut out = DMatrix::zeros(nj * bk.len(), r);
    for (k, b) in bk.iter().enumerate() {
        let b = b.borrow();
        if b.shape() != (nj, r) {
            return arg_err(format!("window {k} has shape {:?}, expected {:?}", b.shape(), (nj, r)));
        }
        out.view_mut((k * nj, 0), (nj, r)).copy_from(b);
    }
    Ok(out)
}

/// FMS on the stacked evolving factors. A CP estimate passes `K` copies
/// of its `B`.
pub fn fms_evolving<M, N>(bk_true: &[M], bk_est: &[N], m: &ComponentMatching) -> Result<f64>
where
    M: std::borrow::Borrow<DMatrix<f64>>,
    N: std::borrow::Borrow<DMatrix<f64>>,
{
    if bk_true.len() != bk_est.len() {
        return arg_err(format!("window counts differ: {} vs {}", bk_true.len(), bk_est.len()));
    }
    fms(&stack_windows(bk_true)?, &stack_windows(bk_est)?, m)
}

const KMEANS_RESTARTS: usize = 20;
const KMEANS_MAX_ITERS: usize = 100;

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Lloyd's k-means with k-means++ seeding, best of several restarts by
/// within-cluster sum of squares. Returns one label per point.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: Seed) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return arg_err(format!("k-means needs 1 <= k <= {n}, got {k}"));
    }
    let mut rng = seed.rng();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
        while centers.len() < k {
            let d: Vec<f64> = points
                .iter()
                .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = d.iter().sum();
            let next = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut idx = n - 1;
                for (i, &di) in d.iter().enumerate() {
                    if u < di {
                        idx = i;
                        break;
                    }
                    u -= di;
                }
                idx
            } else {
                rng.random_range(0..n)
            };
            centers.push(points[next].clone());
        }

        let mut labels = vec![usize::MAX; n];
        for _ in 0..KMEANS_MAX_ITERS {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let l = (0..k)
                    .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                    .expect("k >= 1");
                if labels[i] != l {
                    labels[i] = l;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
                if members.is_empty() {
                    continue;
                }
                for (d, v) in center.iter_mut().enumerate() {
                    *v = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
                }
            }
        }
        let wss: f64 = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
        if best.as_ref().is_none_or(|(b, _)| wss < *b) {
            best = Some((wss, labels));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Percentage of points whose cluster maps to their true label under the
/// best one-to-one relabeling.
pub fn label_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return arg_err(format!("label counts differ or are empty: {} vs {}", pred.len(), truth.len()));
    }
    let n = pred.iter().chain(truth).max().expect("non-empty") + 1;
    let mut confusion = DMatrix::zeros(n, n);
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[(p, t)] += 1.0;
    }
    let perm = max_weight_assignment(&confusion);
    let hits: f64 = perm.iter().enumerate().map(|(p, &t)| confusion[(p, t)]).sum();
    Ok(100.0 * hits / pred.len() as f64)
}

/// Best k-means accuracy over every non-empty subset of `ahat`'s columns.
pub fn clustering_accuracy(ahat: &DMatrix<f64>, labels: &[usize], n_clusters: usize, seed: Seed) -> Result<f64> {
    let (n, r) = ahat.shape();
    if labels.len() != n {
        return arg_err(format!("{} labels for {n} rows", labels.len()));
    }
    if n_clusters == 0 || n_clusters > n {
        return arg_err(format!("cluster count {n_clusters} must be in 1..={n}"));
    }
    if r >= usize::BITS as usize {
        return arg_err(format!("too many components ({r}) for subset search"));
    }
    let mut best = 0.0f64;
    for mask in 1usize..(1 << r) {
        let cols: Vec<usize> = (0..r).filter(|c| mask & (1 << c) != 0).collect();
        let points: Vec<Vec<f64>> = (0..n).map(|i| cols.iter().map(|&c| ahat[(i, c)]).collect()).collect();
        let pred = kmeans(&points, n_clusters, seed.derive(&[mask as u64]))?;
        best = best.max(label_accuracy(&pred, labels)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub df: f64,
}

/// Pooled-variance two-sample t-test. With zero pooled variance the result
/// is `t = 0, p = 1` for equal means and `t = ±∞, p = 0` otherwise.
pub fn two_sample_ttest(x: &[f64], y: &[f64]) -> Result<TTest> {
    if x.len() < 2 || y.len() < 2 {
        return arg_err(format!("t-test needs at least 2 values per group, got {} and {}", x.len(), y.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return arg_err("t-test samples must be finite");
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let ss = |s: &[f64], m: f64| s.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let df = nx + ny - 2.0;
    let pooled = (ss(x, mx) + ss(y, my)) / df;
    let se = (pooled * (1.0 / nx + 1.0 / ny)).sqrt();
    let diff = mx - my;
    if se == 0.0 {
        return Ok(if diff == 0.0 {
            TTest { t: 0.0, p: 1.0, df }
        } else {
            TTest { t: diff.signum() * f64::INFINITY, p: 0.0, df }
        });
    }
    let t = diff / se;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| crate::Error::Numeric(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, p, df })
}

/// Factors of one fitted run, one matrix per mode (evolving modes stacked).
#[derive(Debug, Clone)]
pub struct RunFactors {
    pub fit: f64,
    pub factors: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub unique: bool,
    /// Runs within the fit window of the best, the best included.
    pub n_compared: usize,
    /// Smallest per-mode FMS of a compared run against the best run.
    pub min_fms: f64,
}

/// Fit window, in percentage points, for runs that count as reaching the
/// best fit.
pub const UNIQUENESS_FIT_WINDOW: f64 = 0.1;
pub const UNIQUENESS_MIN_FMS: f64 = 0.99;

/// Checks that every run within [`UNIQUENESS_FIT_WINDOW`] of the best fit
/// matches the best run with FMS ≥ [`UNIQUENESS_MIN_FMS`] in every mode.
pub fn uniqueness_check(runs: &[RunFactors]) -> Result<UniquenessReport> {
    if runs.len() < 2 {
        return arg_err(format!("uniqueness check needs at least 2 runs, got {}", runs.len()));
    }
    let best = runs
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.fit.total_cmp(&b.fit).then(j.cmp(i)))
        .map(|(i, _)| i)
        .expect("non-empty");
    let reference: Vec<&DMatrix<f64>> = runs[best].factors.iter().collect();
    let mut n_compared = 1;
    let mut min_fms = 1.0f64;
    for (i, run) in runs.iter().enumerate() {
        if i == best || runs[best].fit - run.fit > UNIQUENESS_FIT_WINDOW {
            continue;
        }
        n_compared += 1;
        let est: Vec<&DMatrix<f64>> = run.factors.iter().collect();
        let m = match_components(&reference, &est)?;
        for (u, v) in reference.iter().zip(&est) {
            min_fms = min_fms.min(fms(u, v, &m)?);
        }
    }
    Ok(UniquenessReport {
        unique: min_fms >= UNIQUENESS_MIN_FMS,
        n_compared,
        min_fms,
    })
}
