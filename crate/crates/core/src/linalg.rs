//! Small dense complex matrices.
//!
//! Everything here operates on M×M or M×N matrices with M at most a few
//! dozen, so plain column-major storage and textbook algorithms are enough.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;

/// Column-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from column-major data.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_column_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), rows * cols, "column-major data length mismatch");
        Self { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<Complex64>]) -> Self {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows * cols);
        for col in columns {
            assert_eq!(col.len(), rows, "ragged columns");
            data.extend_from_slice(col);
        }
        Self { rows, cols, data }
    }

    /// `v v^H`.
    pub fn outer(v: &[Complex64]) -> Self {
        let n = v.len();
        Self::from_fn(n, n, |r, c| v[r] * v[c].conj())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn col(&self, c: usize) -> &[Complex64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, c: usize) -> &mut [Complex64] {
        let rows = self.rows;
        &mut self.data[c * rows..(c + 1) * rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[Complex64]> {
        self.data.chunks_exact(self.rows.max(1)).take(self.cols)
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "inner dimension mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for c in 0..rhs.cols {
            for k in 0..self.cols {
                let b = rhs[(k, c)];
                if b == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let a_col = self.col(k);
                let o_col = out.col_mut(c);
                for (o, &a) in o_col.iter_mut().zip(a_col) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len());
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows];
        for (c, &x) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.col(c)) {
                *o += a * x;
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm_sqr(&self) -> f64 {
        self.data.iter().map(Complex64::norm_sqr).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sqr().sqrt()
    }

    /// `(A + A^H) / 2`.
    pub fn hermitian_part(&self) -> Self {
        assert!(self.is_square());
        Self::from_fn(self.rows, self.cols, |r, c| {
            (self[(r, c)] + self[(c, r)].conj()) * 0.5
        })
    }

    pub fn max_hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for c in 0..self.cols {
            for r in 0..self.rows {
                worst = worst.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        worst
    }

    /// Lower-triangular Cholesky factor of a Hermitian positive-definite
    /// matrix, or `None` when a pivot is not strictly positive.
    pub fn cholesky(&self) -> Option<Cholesky> {
        if !self.is_square() {
            return None;
        }
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let ljj = d.sqrt();
            l[(j, j)] = Complex64::new(ljj, 0.0);
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / ljj;
            }
        }
        Some(Cholesky { l })
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[c * self.rows + r]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[c * self.rows + r]
    }
}

/// `A = L L^H` with `L` lower triangular and a real positive diagonal.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: CMatrix,
}

impl Cholesky {
    pub fn factor(&self) -> &CMatrix {
        &self.l
    }

    /// `ln det(A)`, which is real for Hermitian positive-definite `A`.
    pub fn ln_det(&self) -> f64 {
        (0..self.l.rows).map(|i| 2.0 * self.l[(i, i)].re.ln()).sum()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.l.rows;
        assert_eq!(b.len(), n);
        // forward: L y = b
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)].re;
        }
        // backward: L^H x = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)].conj() * y[k];
            }
            y[i] = s / self.l[(i, i)].re;
        }
        y
    }

    pub fn inverse(&self) -> CMatrix {
        let n = self.l.rows;
        let mut out = CMatrix::zeros(n, n);
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..n {
            e.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            e[c] = Complex64::new(1.0, 0.0);
            let x = self.solve(&e);
            out.col_mut(c).copy_from_slice(&x);
        }
        // exact Hermitian symmetry for downstream quadratic forms
        out.hermitian_part()
    }
}

/// `x^H A x`, real part only (exact for Hermitian `A`).
pub fn quadratic_form(a: &CMatrix, x: &[Complex64]) -> f64 {
    let n = x.len();
    debug_assert_eq!(a.rows(), n);
    let mut acc = 0.0;
    for c in 0..n {
        let col = a.col(c);
        let mut s = Complex64::new(0.0, 0.0);
        for (r, &v) in col.iter().enumerate() {
            s += x[r].conj() * v;
        }
        acc += (s * x[c]).re;
    }
    acc
}

pub fn vec_norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(Complex64::norm_sqr).sum()
}
