//! Dense row-major matrices and the small operation set the variant graphs
//! need: multiply with optional operand transposition, elementwise add,
//! scaling, seeded random fill, and a max-relative-difference metric.
//!
//! Every operation is a pure function of its inputs and deterministic:
//! identical inputs give bit-identical outputs within one build, regardless
//! of thread count (each output element keeps a fixed accumulation order).

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// Element types the kernel accepts: `f64` for verification, `f32` for timing.
pub trait Scalar:
    Copy
    + Default
    + PartialOrd
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(value: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(value: f64) -> Self {
        value
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(value: f64) -> Self {
        value as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

/// Dense matrix, row-major, with at least one row and one column.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        let len = checked_len(rows, cols)?;
        Ok(Self {
            rows,
            cols,
            data: vec![T::ZERO; len],
        })
    }

    /// Builds a matrix from row-major data; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        let len = checked_len(rows, cols)?;
        if data.len() != len {
            return Err(Error::InvalidConfig(format!(
                "expected {} elements for a {}x{} matrix, got {}",
                len,
                rows,
                cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.data[i * n + i] = T::ONE;
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        assert!(row < self.rows && col < self.cols, "index out of bounds");
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        assert!(row < self.rows && col < self.cols, "index out of bounds");
        self.data[row * self.cols + col] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Materialized transpose.
    pub fn transposed(&self) -> Self {
        let mut out = vec![T::ZERO; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn scale(&self, factor: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * factor).collect(),
        }
    }

    /// Elementwise `self += other`.
    pub fn add_assign_elementwise(&mut self, other: &Self) -> Result<()> {
        check_same_shape("add", self, other)?;
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn checked_len(rows: usize, cols: usize) -> Result<usize> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidConfig(
            "matrix dimensions must be positive".to_string(),
        ));
    }
    rows.checked_mul(cols)
        .filter(|&len| len <= isize::MAX as usize / std::mem::size_of::<f64>())
        .ok_or(Error::TooLarge { rows, cols })
}

fn check_same_shape<T: Scalar>(op: &'static str, a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        });
    }
    Ok(())
}

/// Counts executed multiply-add work: one `m x k` by `k x n` product is
/// `2*m*k*n` FLOPs. Elementwise matrix additions are not counted, matching
/// the convention of the analytic cost model.
#[derive(Debug, Default, Clone)]
pub struct FlopTally {
    flops: u64,
}

impl FlopTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_matmul(&mut self, m: usize, k: usize, n: usize) {
        let product = (m as u64)
            .checked_mul(k as u64)
            .and_then(|v| v.checked_mul(n as u64))
            .and_then(|v| v.checked_mul(2))
            .expect("FLOP tally overflow");
        self.flops = self.flops.checked_add(product).expect("FLOP tally overflow");
    }

    pub fn total(&self) -> u64 {
        self.flops
    }
}

fn effective_dims<T: Scalar>(m: &Matrix<T>, transpose: bool) -> (usize, usize) {
    if transpose {
        (m.cols, m.rows)
    } else {
        (m.rows, m.cols)
    }
}

/// `op(left) * op(right)` where each `op` is identity or transpose.
///
/// Inner dimensions after applying the flags must agree. The product is
/// accumulated in ascending inner-index order for every output element, so
/// results are bit-identical across repeated calls and thread counts.
pub fn matmul<T: Scalar>(
    left: &Matrix<T>,
    right: &Matrix<T>,
    transpose_left: bool,
    transpose_right: bool,
) -> Result<Matrix<T>> {
    let (m, k) = effective_dims(left, transpose_left);
    let (k2, n) = effective_dims(right, transpose_right);
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left_rows: m,
            left_cols: k,
            right_rows: k2,
            right_cols: n,
        });
    }
    let mut out = Matrix::zeros(m, n)?;
    kernel(
        &mut out.data,
        left,
        right,
        transpose_left,
        transpose_right,
        k,
        n,
    );
    Ok(out)
}

/// `acc += op(left) * op(right)`; `acc` must already have the product shape.
pub fn matmul_acc<T: Scalar>(
    acc: &mut Matrix<T>,
    left: &Matrix<T>,
    right: &Matrix<T>,
    transpose_left: bool,
    transpose_right: bool,
) -> Result<()> {
    let (m, k) = effective_dims(left, transpose_left);
    let (k2, n) = effective_dims(right, transpose_right);
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul_acc",
            left_rows: m,
            left_cols: k,
            right_rows: k2,
            right_cols: n,
        });
    }
    if acc.shape() != (m, n) {
        return Err(Error::ShapeMismatch {
            op: "matmul_acc accumulator",
            left_rows: acc.rows,
            left_cols: acc.cols,
            right_rows: m,
            right_cols: n,
        });
    }
    kernel(
        &mut acc.data,
        left,
        right,
        transpose_left,
        transpose_right,
        k,
        n,
    );
    Ok(())
}

/// [`matmul`] that also records the executed FLOPs.
pub fn matmul_tallied<T: Scalar>(
    left: &Matrix<T>,
    right: &Matrix<T>,
    transpose_left: bool,
    transpose_right: bool,
    tally: &mut FlopTally,
) -> Result<Matrix<T>> {
    let out = matmul(left, right, transpose_left, transpose_right)?;
    let (m, k) = effective_dims(left, transpose_left);
    tally.record_matmul(m, k, out.cols);
    Ok(out)
}

/// [`matmul_acc`] that also records the executed FLOPs.
pub fn matmul_acc_tallied<T: Scalar>(
    acc: &mut Matrix<T>,
    left: &Matrix<T>,
    right: &Matrix<T>,
    transpose_left: bool,
    transpose_right: bool,
    tally: &mut FlopTally,
) -> Result<()> {
    matmul_acc(acc, left, right, transpose_left, transpose_right)?;
    let (m, k) = effective_dims(left, transpose_left);
    tally.record_matmul(m, k, acc.cols);
    Ok(())
}

/// Work threshold (multiply-adds) below which row parallelism is not worth it.
#[cfg(feature = "parallel")]
const PAR_MIN_WORK: u128 = 1 << 21;

fn kernel<T: Scalar>(
    out: &mut [T],
    left: &Matrix<T>,
    right: &Matrix<T>,
    transpose_left: bool,
    transpose_right: bool,
    k: usize,
    n: usize,
) {
    #[cfg(feature = "parallel")]
    {
        let m = out.len() / n;
        let work = (m as u128) * (k as u128) * (n as u128);
        if m > 1 && work >= PAR_MIN_WORK && rayon::current_num_threads() > 1 {
            use rayon::prelude::*;
            out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                row_kernel(i, row, left, right, transpose_left, transpose_right, k);
            });
            return;
        }
    }
    for (i, row) in out.chunks_mut(n).enumerate() {
        row_kernel(i, row, left, right, transpose_left, transpose_right, k);
    }
}

/// Accumulates one output row. Every element sums its `k` products in
/// ascending `p` order, which is what makes the whole kernel deterministic.
fn row_kernel<T: Scalar>(
    i: usize,
    row: &mut [T],
    left: &Matrix<T>,
    right: &Matrix<T>,
    transpose_left: bool,
    transpose_right: bool,
    k: usize,
) {
    let n = row.len();
    match (transpose_left, transpose_right) {
        (false, false) => {
            let lrow = &left.data[i * left.cols..(i + 1) * left.cols];
            for (p, &a) in lrow.iter().enumerate() {
                let rrow = &right.data[p * right.cols..p * right.cols + n];
                for (o, &b) in row.iter_mut().zip(rrow.iter()) {
                    *o += a * b;
                }
            }
        }
        (false, true) => {
            let lrow = &left.data[i * left.cols..(i + 1) * left.cols];
            for (j, o) in row.iter_mut().enumerate() {
                let rrow = &right.data[j * right.cols..(j + 1) * right.cols];
                let mut acc = *o;
                for (&a, &b) in lrow.iter().zip(rrow.iter()) {
                    acc += a * b;
                }
                *o = acc;
            }
        }
        (true, false) => {
            for p in 0..k {
                let a = left.data[p * left.cols + i];
                let rrow = &right.data[p * right.cols..p * right.cols + n];
                for (o, &b) in row.iter_mut().zip(rrow.iter()) {
                    *o += a * b;
                }
            }
        }
        (true, true) => {
            for (j, o) in row.iter_mut().enumerate() {
                let rrow = &right.data[j * right.cols..(j + 1) * right.cols];
                let mut acc = *o;
                for (p, &b) in rrow.iter().enumerate() {
                    acc += left.data[p * left.cols + i] * b;
                }
                *o = acc;
            }
        }
    }
}

/// Elementwise sum of two equally shaped matrices.
pub fn add<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    check_same_shape("add", a, b)?;
    let data = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(&x, &y)| x + y)
        .collect();
    Ok(Matrix {
        rows: a.rows,
        cols: a.cols,
        data,
    })
}

/// Reproducible pseudo-random matrix with entries in `[-scale, scale)`.
///
/// The stream is a ChaCha8 generator keyed with `seed_from_u64(seed)`; each
/// element consumes one 64-bit draw whose top 53 bits become a float in
/// `[0, 1)`, mapped affinely to `[-scale, scale)`, filling row-major order.
/// The same seed always produces the same matrix on every platform.
pub fn fill_random<T: Scalar>(rows: usize, cols: usize, seed: u64, scale: f64) -> Result<Matrix<T>> {
    let len = checked_len(rows, cols)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        let unit = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        data.push(T::from_f64((unit * 2.0 - 1.0) * scale));
    }
    Ok(Matrix { rows, cols, data })
}

const REL_DIFF_EPS: f64 = 1e-12;

/// Max over elements of `|a - b| / max(|a|, |b|, 1e-12)`.
pub fn max_rel_diff<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<f64> {
    check_same_shape("max_rel_diff", a, b)?;
    let mut worst = 0.0f64;
    for (&x, &y) in a.data.iter().zip(b.data.iter()) {
        let r = rel_diff(x.to_f64(), y.to_f64());
        if r > worst {
            worst = r;
        }
    }
    Ok(worst)
}

/// Scalar form of [`max_rel_diff`], shared with the gradient checks.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()).max(REL_DIFF_EPS))
}
