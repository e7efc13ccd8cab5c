//! Minimal dense 64-bit linear algebra: products, Cholesky factorization and
//! triangular/SPD solves.
//!
//! Sized for this crate's workloads (kernel matrices of a few hundred rows,
//! dense layers up to a few thousand units). Row-major storage; the hot
//! kernels are written over contiguous row slices so the compiler can
//! vectorize them, but there is no blocking and no SIMD intrinsics.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Errors from matrix construction, factorization and solves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinalgError {
    /// Operand shapes do not conform for the named operation.
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// A Cholesky pivot was not strictly positive. Carries the pivot index;
    /// callers typically retry with diagonal jitter.
    NotPositiveDefinite { pivot: usize },
    /// The matrix is not symmetric within tolerance at the reported entry.
    NotSymmetric { row: usize, col: usize },
    /// A non-finite entry was found at the reported position.
    NonFinite { row: usize, col: usize },
    /// A triangular solve hit a zero diagonal entry.
    ZeroDiagonal { index: usize },
    /// Raw data length does not equal rows * cols.
    BadLength { expected: usize, got: usize },
}

impl fmt::Display for LinalgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinalgError::DimensionMismatch { op, left, right } => write!(
                f,
                "{op}: dimension mismatch {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            LinalgError::NotPositiveDefinite { pivot } => {
                write!(f, "matrix not positive definite (pivot {pivot} <= 0)")
            }
            LinalgError::NotSymmetric { row, col } => {
                write!(f, "matrix not symmetric at ({row}, {col})")
            }
            LinalgError::NonFinite { row, col } => {
                write!(f, "non-finite entry at ({row}, {col})")
            }
            LinalgError::ZeroDiagonal { index } => {
                write!(f, "zero diagonal at index {index} in triangular solve")
            }
            LinalgError::BadLength { expected, got } => {
                write!(f, "data length {got} does not match rows*cols = {expected}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for LinalgError {}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix.
    #[must_use]
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    #[must_use]
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, validating length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::BadLength {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from a slice of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(LinalgError::DimensionMismatch {
                    op: "from_rows",
                    left: (1, c),
                    right: (1, row.len()),
                });
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(LinalgError::NonFinite { row: i, col: j });
                }
                data.push(*v);
            }
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    #[must_use]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[must_use]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[must_use]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Row `i` as a contiguous slice.
    #[must_use]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[must_use]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[must_use]
    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Returns a copy with `jitter` added to the diagonal.
    #[must_use]
    pub fn with_added_diagonal(&self, jitter: f64) -> Matrix {
        let mut out = self.clone();
        let n = self.rows.min(self.cols);
        for i in 0..n {
            out.data[i * self.cols + i] += jitter;
        }
        out
    }

    /// Checks symmetry within `tol`, reporting the first offending entry.
    pub fn check_symmetric(&self, tol: f64) -> Result<(), LinalgError> {
        if self.rows != self.cols {
            return Err(LinalgError::DimensionMismatch {
                op: "check_symmetric",
                left: (self.rows, self.cols),
                right: (self.cols, self.rows),
            });
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let a = self.data[i * self.cols + j];
                let b = self.data[j * self.cols + i];
                if (a - b).abs() > tol {
                    return Err(LinalgError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(())
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "matmul",
                left: (self.rows, self.cols),
                right: (other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik != 0.0 {
                    axpy(a_ik, other.row(k), out_row);
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T`. Both operands are walked along contiguous rows.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch {
                op: "matmul_nt",
                left: (self.rows, self.cols),
                right: (other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                *o = dot(a_row, other.row(j));
            }
        }
        Ok(out)
    }

    /// `self^T * other`.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.rows != other.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "matmul_tn",
                left: (self.rows, self.cols),
                right: (other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (j, &a_kj) in a_row.iter().enumerate() {
                if a_kj != 0.0 {
                    axpy(a_kj, b_row, out.row_mut(j));
                }
            }
        }
        Ok(out)
    }
}

/// Dot product with four accumulators. The fixed accumulation order keeps
/// results bit-reproducible while letting the compiler vectorize.
#[must_use]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [0.0f64; 4];
    let mut xs = x.chunks_exact(4);
    let mut ys = y.chunks_exact(4);
    for (cx, cy) in (&mut xs).zip(&mut ys) {
        acc[0] += cx[0] * cy[0];
        acc[1] += cx[1] * cy[1];
        acc[2] += cx[2] * cy[2];
        acc[3] += cx[3] * cy[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (a, b) in xs.remainder().iter().zip(ys.remainder()) {
        s += a * b;
    }
    s
}

/// `out += a * x`, elementwise.
pub fn axpy(a: f64, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Which triangular system a solve addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Solve `L x = b` by forward substitution.
    Lower,
    /// Solve `L^T x = b` by back substitution.
    Upper,
}

/// Lower-triangular Cholesky factor: `L L^T` reconstructs the factored
/// matrix. Diagonal entries are strictly positive, strict upper part is zero.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: Matrix,
}

impl CholeskyFactor {
    /// Wraps an explicit lower-triangular matrix, validating the invariants.
    pub fn from_lower(l: Matrix) -> Result<Self, LinalgError> {
        if l.rows != l.cols {
            return Err(LinalgError::DimensionMismatch {
                op: "from_lower",
                left: (l.rows, l.cols),
                right: (l.cols, l.cols),
            });
        }
        for i in 0..l.rows {
            if l.get(i, i) <= 0.0 {
                return Err(LinalgError::NotPositiveDefinite { pivot: i });
            }
            for j in (i + 1)..l.cols {
                if l.get(i, j) != 0.0 {
                    return Err(LinalgError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(CholeskyFactor { l })
    }

    /// The lower-triangular factor `L`.
    #[must_use]
    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    #[must_use]
    pub fn order(&self) -> usize {
        self.l.rows
    }

    /// `log det(L L^T) = 2 * sum(ln L_ii)`.
    #[must_use]
    pub fn log_det(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.l.rows {
            s += libm::log(self.l.get(i, i));
        }
        2.0 * s
    }

    /// Solves `(L L^T) x = b` by a forward and a back substitution.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix, LinalgError> {
        let y = solve_triangular(self, b, Side::Lower)?;
        solve_triangular(self, &y, Side::Upper)
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// Fails with [`LinalgError::NotPositiveDefinite`] as soon as a pivot drops
/// to zero or below; callers add diagonal jitter and retry (see
/// [`cholesky_with_jitter`]).
pub fn cholesky(a: &Matrix) -> Result<CholeskyFactor, LinalgError> {
    a.check_symmetric(1e-10)?;
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let lj = &l.data[j * n..j * n + j];
        let d = a.get(j, j) - dot(lj, lj);
        if d <= 0.0 || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { pivot: j });
        }
        let djj = libm::sqrt(d);
        l.data[j * n + j] = djj;
        for i in (j + 1)..n {
            let (head, tail) = l.data.split_at_mut(i * n);
            let lj = &head[j * n..j * n + j];
            let li = &tail[..j];
            let v = (a.get(i, j) - dot(li, lj)) / djj;
            tail[j] = v;
        }
    }
    Ok(CholeskyFactor { l })
}

/// Solves `L x = b` (lower) or `L^T x = b` (upper) for all columns of `b`.
pub fn solve_triangular(
    factor: &CholeskyFactor,
    b: &Matrix,
    side: Side,
) -> Result<Matrix, LinalgError> {
    let l = &factor.l;
    let n = l.rows;
    if b.rows != n {
        return Err(LinalgError::DimensionMismatch {
            op: "solve_triangular",
            left: (n, n),
            right: (b.rows, b.cols),
        });
    }
    let m = b.cols;
    let mut x = b.clone();
    match side {
        Side::Lower => {
            for i in 0..n {
                let diag = l.get(i, i);
                if diag == 0.0 {
                    return Err(LinalgError::ZeroDiagonal { index: i });
                }
                let (done, rest) = x.data.split_at_mut(i * m);
                let xi = &mut rest[..m];
                for k in 0..i {
                    let lik = l.get(i, k);
                    if lik != 0.0 {
                        axpy(-lik, &done[k * m..(k + 1) * m], xi);
                    }
                }
                for v in xi.iter_mut() {
                    *v /= diag;
                }
            }
        }
        Side::Upper => {
            for i in (0..n).rev() {
                let diag = l.get(i, i);
                if diag == 0.0 {
                    return Err(LinalgError::ZeroDiagonal { index: i });
                }
                let (head, tail) = x.data.split_at_mut((i + 1) * m);
                let xi = &mut head[i * m..];
                for k in (i + 1)..n {
                    // L^T[i][k] = L[k][i]
                    let lki = l.get(k, i);
                    if lki != 0.0 {
                        axpy(-lki, &tail[(k - i - 1) * m..(k - i) * m], xi);
                    }
                }
                for v in xi.iter_mut() {
                    *v /= diag;
                }
            }
        }
    }
    Ok(x)
}

/// Largest diagonal jitter the escalation ladder will try.
pub const MAX_JITTER: f64 = 1e-2;

/// Factors `a + jitter*I`, escalating the jitter tenfold on failure.
///
/// A zero starting jitter escalates to `1e-10` first. Gives up once the
/// jitter would exceed [`MAX_JITTER`]. Returns the factor together with the
/// jitter that succeeded, so callers can keep their solves consistent.
pub fn cholesky_with_jitter(
    a: &Matrix,
    jitter: f64,
) -> Result<(CholeskyFactor, f64), LinalgError> {
    a.check_symmetric(1e-10)?;
    let mut j = jitter;
    loop {
        let attempt = if j == 0.0 {
            cholesky(a)
        } else {
            cholesky(&a.with_added_diagonal(j))
        };
        match attempt {
            Ok(f) => return Ok((f, j)),
            Err(LinalgError::NotPositiveDefinite { pivot }) => {
                let next = if j == 0.0 { 1e-10 } else { j * 10.0 };
                if next > MAX_JITTER {
                    return Err(LinalgError::NotPositiveDefinite { pivot });
                }
                j = next;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Solves `(a + jitter*I) x = b` via Cholesky and two triangular solves,
/// with the jitter escalation ladder of [`cholesky_with_jitter`].
pub fn solve_spd(a: &Matrix, b: &Matrix, jitter: f64) -> Result<Matrix, LinalgError> {
    let (factor, _) = cholesky_with_jitter(a, jitter)?;
    factor.solve(b)
}
