//! Dense matrices, SVD, pseudoinverse and numerical rank.
//!
//! [`Matrix`] is a row-major block of `f64` whose public constructors reject
//! non-finite entries. Values are treated as immutable across operation
//! boundaries; the few in-place helpers are crate-private and used by the
//! training hot path.

mod svd;

pub use svd::{svd, SvdResult, MAX_SWEEPS};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Default relative cutoff for [`pinv`].
pub const DEFAULT_RCOND: f64 = 1e-12;
/// Default multiplier of `max(rows, cols) * eps * sigma_max` in [`numerical_rank`].
pub const DEFAULT_RANK_TOL_FACTOR: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("data length {got} does not match a {rows}x{cols} matrix")]
    InvalidData { rows: usize, cols: usize, got: usize },
    #[error("non-finite entry {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("empty matrix")]
    Empty,
    #[error("svd did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("csv parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Dense row-major matrix of finite `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::InvalidData {
                rows,
                cols,
                got: data.len(),
            });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: idx / cols.max(1),
                col: idx % cols.max(1),
                value: data[idx],
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from row vectors; all rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(LinalgError::ShapeMismatch {
                    op: "from_rows",
                    left: (i, r.len()),
                    right: (0, cols),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Build entry by entry.
    ///
    /// # Panics
    /// If `f` produces a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = f(i, j);
                assert!(v.is_finite(), "non-finite entry {v} at ({i}, {j})");
                data.push(v);
            }
        }
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 })
    }

    /// Single-column matrix.
    pub fn column(values: &[f64]) -> Result<Self, LinalgError> {
        Self::new(values.len(), 1, values.to_vec())
    }

    /// Single-row matrix.
    pub fn row_vector(values: &[f64]) -> Result<Self, LinalgError> {
        Self::new(1, values.len(), values.to_vec())
    }

    /// Wraps a buffer produced inside the crate without re-validating it.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
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

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix::from_raw(self.cols, self.rows, out)
    }

    /// Entry-wise map. The caller is responsible for `f` keeping entries finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_raw(idx.len(), self.cols, data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    /// Add `row` to every row.
    pub fn add_row_broadcast(&self, row: &[f64]) -> Result<Matrix, LinalgError> {
        if row.len() != self.cols {
            return Err(LinalgError::ShapeMismatch {
                op: "add_row_broadcast",
                left: self.shape(),
                right: (1, row.len()),
            });
        }
        let mut out = self.clone();
        out.add_row_in_place(row);
        Ok(out)
    }

    pub(crate) fn add_row_in_place(&mut self, row: &[f64]) {
        for chunk in self.data.chunks_exact_mut(self.cols) {
            for (v, b) in chunk.iter_mut().zip(row) {
                *v += b;
            }
        }
    }

    /// Serialize as CSV, one row per line. Floats use the shortest decimal
    /// representation that parses back to the same bits.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Matrix, LinalgError> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|tok| {
                    f64::from_str(tok.trim()).map_err(|e| LinalgError::Parse {
                        line: lineno + 1,
                        message: format!("{tok:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push(row);
        }
        Matrix::from_rows(&rows)
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            let cells: Vec<String> = self.row(i).iter().map(|v| format!("{v:>12.6}")).collect();
            writeln!(f, "[{}]", cells.join(" "))?;
        }
        Ok(())
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, where `op` optionally transposes.
///
/// Thin safe wrapper over `matrixmultiply::dgemm`; strides encode the
/// transposes so no copies are made.
pub(crate) fn gemm_into(
    alpha: f64,
    a: &Matrix,
    trans_a: bool,
    b: &Matrix,
    trans_b: bool,
    beta: f64,
    c: &mut Matrix,
) {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, kb, "gemm inner dimension");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c.data {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if trans_b { (1, b.cols) } else { (b.cols, 1) };
    // SAFETY: the shapes and strides above describe exactly the buffers of
    // `a`, `b` and `c`, which are live for the duration of the call; `c` is
    // borrowed mutably and cannot alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

pub(crate) fn gemm(a: &Matrix, trans_a: bool, b: &Matrix, trans_b: bool) -> Matrix {
    let m = if trans_a { a.cols } else { a.rows };
    let n = if trans_b { b.rows } else { b.cols };
    let mut c = Matrix::zeros(m, n);
    gemm_into(1.0, a, trans_a, b, trans_b, 0.0, &mut c);
    c
}

/// Matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.cols != b.rows {
        return Err(LinalgError::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(gemm(a, false, b, false))
}

/// Moore–Penrose pseudoinverse via SVD. Singular values at or below
/// `rcond * sigma_max` are treated as zero.
pub fn pinv(m: &Matrix, rcond: f64) -> Result<Matrix, LinalgError> {
    if !(rcond >= 0.0) {
        return Err(LinalgError::InvalidParameter(format!("rcond must be >= 0, got {rcond}")));
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(Matrix::zeros(cols, rows));
    }
    let s = svd(m)?;
    let smax = s.singular_values.first().copied().unwrap_or(0.0);
    let cutoff = rcond * smax;
    // M+ = V diag(1/s) U^T; scale the columns of V first.
    let k = s.singular_values.len();
    let mut v_scaled = s.vt.transpose();
    for j in 0..k {
        let sigma = s.singular_values[j];
        let inv = if sigma > cutoff && sigma > 0.0 { 1.0 / sigma } else { 0.0 };
        for i in 0..v_scaled.rows {
            let v = v_scaled.get(i, j) * inv;
            v_scaled.set(i, j, v);
        }
    }
    Ok(gemm(&v_scaled, false, &s.u, true))
}

/// Number of singular values strictly above
/// `tol_factor * max(rows, cols) * eps * sigma_max`.
pub fn numerical_rank(m: &Matrix, tol_factor: f64) -> Result<usize, LinalgError> {
    Ok(rank_with_tolerance(m, tol_factor)?.0)
}

/// Like [`numerical_rank`], also returning the absolute tolerance used.
pub fn rank_with_tolerance(m: &Matrix, tol_factor: f64) -> Result<(usize, f64), LinalgError> {
    if !(tol_factor > 0.0) {
        return Err(LinalgError::InvalidParameter(format!(
            "tol_factor must be > 0, got {tol_factor}"
        )));
    }
    if m.is_empty() {
        return Ok((0, 0.0));
    }
    let s = svd(m)?;
    let smax = s.singular_values[0];
    let tol = tol_factor * m.rows.max(m.cols) as f64 * f64::EPSILON * smax;
    Ok((s.singular_values.iter().filter(|&&v| v > tol).count(), tol))
}

/// Mean of each column, as a `1 x cols` row vector.
pub fn column_means(m: &Matrix) -> Result<Matrix, LinalgError> {
    if m.rows == 0 || m.cols == 0 {
        return Err(LinalgError::Empty);
    }
    let mut means = vec![0.0; m.cols];
    for i in 0..m.rows {
        for (acc, v) in means.iter_mut().zip(m.row(i)) {
            *acc += v;
        }
    }
    let n = m.rows as f64;
    for v in &mut means {
        *v /= n;
    }
    Ok(Matrix::from_raw(1, m.cols, means))
}
