//! Dense third-order tensors and the factor matrices that model them.
//!
//! Storage is frontal-slice-major: slice `X_k` occupies a contiguous block of
//! `I·J` values, row-major over `I×J`. Element `(i, j, k)` lives at
//! `k·I·J + i·J + j`.
//!
//! Unfolding conventions (fixed, and matched by [`khatri_rao`]):
//!
//! | mode | shape      | column of element `(i, j, k)` |
//! |------|------------|-------------------------------|
//! | 1    | `I × J·K`  | `k·J + j`                     |
//! | 2    | `J × I·K`  | `k·I + i`                     |
//! | 3    | `K × I·J`  | `j·I + i`                     |
//!
//! With these, `X₍₁₎ = A (C ⊙ B)ᵀ`, `X₍₂₎ = B (C ⊙ A)ᵀ` and `X₍₃₎ = C (B ⊙ A)ᵀ`
//! for a CP model, where `⊙` is [`khatri_rao`].

use std::borrow::Borrow;
use std::ops::Deref;

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{arg_err, Error, Result};

/// A dense `I×J×K` array of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor3 {
    dims: (usize, usize, usize),
    values: Vec<f64>,
}

impl DenseTensor3 {
    /// Builds a tensor from values in storage order. Rejects zero dims, a
    /// count mismatch and non-finite entries.
    pub fn new(dims: (usize, usize, usize), values: Vec<f64>) -> Result<Self> {
        let (i, j, k) = dims;
        if i == 0 || j == 0 || k == 0 {
            return arg_err(format!("tensor dims must be positive, got {i}x{j}x{k}"));
        }
        if values.len() != i * j * k {
            return arg_err(format!(
                "expected {} values for a {i}x{j}x{k} tensor, got {}",
                i * j * k,
                values.len()
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return arg_err(format!("non-finite value at storage position {pos}"));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Result<Self> {
        Self::new(dims, vec![0.0; dims.0 * dims.1 * dims.2])
    }

    /// Stacks `K` frontal slices, each `I×J`.
    pub fn from_slices(slices: &[DMatrix<f64>]) -> Result<Self> {
        let Some(first) = slices.first() else {
            return arg_err("at least one slice is required");
        };
        let (i, j) = first.shape();
        let mut values = Vec::with_capacity(i * j * slices.len());
        for (k, s) in slices.iter().enumerate() {
            if s.shape() != (i, j) {
                return arg_err(format!(
                    "slice {k} has shape {:?}, expected {:?}",
                    s.shape(),
                    (i, j)
                ));
            }
            for row in 0..i {
                for col in 0..j {
                    values.push(s[(row, col)]);
                }
            }
        }
        Self::new((i, j, slices.len()), values)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    /// Values in storage order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let (ni, nj, _) = self.dims;
        self.values[k * ni * nj + i * nj + j]
    }

    /// Row-major `I×J` storage of slice `k`.
    pub fn slice_values(&self, k: usize) -> &[f64] {
        let (ni, nj, _) = self.dims;
        &self.values[k * ni * nj..(k + 1) * ni * nj]
    }

    /// Zero-copy view of `X_kᵀ` (shape `J×I`). The row-major slice storage is
    /// exactly the column-major layout of the transpose.
    pub fn slice_transpose_view(&self, k: usize) -> DMatrixView<'_, f64> {
        let (ni, nj, _) = self.dims;
        DMatrixView::from_slice(self.slice_values(k), nj, ni)
    }

    /// Copy of frontal slice `X_k` as an `I×J` matrix.
    pub fn frontal_slice(&self, k: usize) -> Result<DMatrix<f64>> {
        let (ni, nj, nk) = self.dims;
        if k >= nk {
            return Err(Error::Range { index: k, len: nk });
        }
        Ok(DMatrix::from_row_slice(ni, nj, self.slice_values(k)))
    }

    pub fn frontal_slices(&self) -> Vec<DMatrix<f64>> {
        (0..self.dims.2)
            .map(|k| self.frontal_slice(k).expect("k in range"))
            .collect()
    }

    /// Mode-`n` unfolding, `n ∈ {1, 2, 3}`; see the module docs for column order.
    pub fn unfold(&self, mode: usize) -> Result<DMatrix<f64>> {
        let (ni, nj, nk) = self.dims;
        let m = match mode {
            1 => DMatrix::from_fn(ni, nj * nk, |i, col| self.get(i, col % nj, col / nj)),
            2 => DMatrix::from_fn(nj, ni * nk, |j, col| self.get(col % ni, j, col / ni)),
            3 => DMatrix::from_fn(nk, ni * nj, |k, col| self.get(col % ni, col / ni, k)),
            _ => return arg_err(format!("mode must be 1, 2 or 3, got {mode}")),
        };
        Ok(m)
    }

    pub fn squared_norm(&self) -> f64 {
        sum_squares(&self.values)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }
}

/// Frobenius norm of a tensor.
pub fn frobenius_norm(t: &DenseTensor3) -> f64 {
    t.frobenius_norm()
}

/// Compensated (Neumaier) sum of squares.
pub(crate) fn sum_squares(values: &[f64]) -> f64 {
    let mut acc = NeumaierSum::default();
    for v in values {
        acc.add(v * v);
    }
    acc.total()
}

#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// A `rows × R` factor matrix with finite entries. Columns are components.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix(DMatrix<f64>);

impl FactorMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return arg_err(format!("factor matrix must be non-empty, got {:?}", m.shape()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return arg_err("factor matrix contains non-finite values");
        }
        Ok(Self(m))
    }

    pub fn from_row_slice(rows: usize, rank: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * rank {
            return arg_err(format!(
                "expected {} values for a {rows}x{rank} factor, got {}",
                rows * rank,
                values.len()
            ));
        }
        Self::new(DMatrix::from_row_slice(rows, rank, values))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn rank(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl Deref for FactorMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl Borrow<DMatrix<f64>> for FactorMatrix {
    fn borrow(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl From<FactorMatrix> for DMatrix<f64> {
    fn from(f: FactorMatrix) -> Self {
        f.0
    }
}

/// Column-wise Kronecker product: column `r` of the `(m·n)×R` result is
/// `u_r ⊗ v_r`, i.e. entry `(p·n + q, r) = u[p, r]·v[q, r]`.
pub fn khatri_rao(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if u.ncols() != v.ncols() {
        return arg_err(format!(
            "khatri-rao rank mismatch: {} vs {}",
            u.ncols(),
            v.ncols()
        ));
    }
    let n = v.nrows();
    Ok(DMatrix::from_fn(u.nrows() * n, u.ncols(), |row, r| {
        u[(row / n, r)] * v[(row % n, r)]
    }))
}

/// Tensor with slices `X_k = A·diag(c_k)·Bᵀ`.
pub fn reconstruct_cp(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DenseTensor3> {
    check_ranks(a, b, c)?;
    assemble(a, c, |_| b)
}

/// Tensor with slices `X_k = A·diag(c_k)·B_kᵀ`.
pub fn reconstruct_parafac2<M: Borrow<DMatrix<f64>>>(
    a: &DMatrix<f64>,
    bk: &[M],
    c: &DMatrix<f64>,
) -> Result<DenseTensor3> {
    if bk.len() != c.nrows() {
        return arg_err(format!(
            "expected {} evolving factors (one per row of C), got {}",
            c.nrows(),
            bk.len()
        ));
    }
    let Some(first) = bk.first() else {
        return arg_err("no evolving factors given");
    };
    let first = first.borrow();
    check_ranks(a, first, c)?;
    for (k, b) in bk.iter().enumerate() {
        let b = b.borrow();
        if b.shape() != first.shape() {
            return arg_err(format!(
                "evolving factor {k} has shape {:?}, expected {:?}",
                b.shape(),
                first.shape()
            ));
        }
    }
    assemble(a, c, |k| bk[k].borrow())
}

fn check_ranks(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<()> {
    let r = a.ncols();
    if r == 0 || b.ncols() != r || c.ncols() != r {
        return arg_err(format!(
            "factor ranks differ: A has {}, B has {}, C has {}",
            a.ncols(),
            b.ncols(),
            c.ncols()
        ));
    }
    if a.nrows() == 0 || b.nrows() == 0 || c.nrows() == 0 {
        return arg_err("factor matrices must have at least one row");
    }
    Ok(())
}

fn assemble<'a, F>(a: &DMatrix<f64>, c: &DMatrix<f64>, b_of: F) -> Result<DenseTensor3>
where
    F: Fn(usize) -> &'a DMatrix<f64>,
{
    let (ni, r) = a.shape();
    let nk = c.nrows();
    let nj = b_of(0).nrows();
    let mut values = Vec::with_capacity(ni * nj * nk);
    let mut scaled = vec![0.0; r];
    for k in 0..nk {
        let b = b_of(k);
        for i in 0..ni {
            for (s, rr) in scaled.iter_mut().zip(0..r) {
                *s = a[(i, rr)] * c[(k, rr)];
            }
            for j in 0..nj {
                let mut acc = 0.0;
                for (s, rr) in scaled.iter().zip(0..r) {
                    acc += s * b[(j, rr)];
                }
                values.push(acc);
            }
        }
    }
    DenseTensor3::new((ni, nj, nk), values)
}
