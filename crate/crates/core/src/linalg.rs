//! Dense row-major matrices and vectors in `f64`.
//!
//! Public constructors reject NaN/Inf. Everything here is a pure function of
//! its inputs; no operation mutates shared state.

use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// Default relative tolerance for [`spectral_norm`].
pub const SPECTRAL_TOL: f64 = 1e-10;
/// Default iteration cap for [`spectral_norm`].
pub const SPECTRAL_MAX_ITER: usize = 10_000;

const POWER_ITERATION_SEED: u64 = 0x5eed_0f_9a11_0c0d;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        check_finite(&entries, "vector")?;
        Ok(Vector(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    /// Wraps entries produced by arithmetic on finite inputs.
    pub(crate) fn from_vec_unchecked(entries: Vec<f64>) -> Self {
        Vector(entries)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.0)
    }

    pub fn scale(&self, alpha: f64) -> Vector {
        Vector(self.0.iter().map(|v| alpha * v).collect())
    }

    pub fn relu(&self) -> Vector {
        Vector(self.0.iter().map(|&v| relu(v)).collect())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return dim_err(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            ));
        }
        check_finite(&data, "matrix")?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return dim_err("ragged rows");
        }
        Matrix::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(entries: &[f64]) -> Result<Self> {
        check_finite(entries, "diagonal")?;
        let n = entries.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &v) in entries.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        Ok(m)
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Panics if `value` is not finite or the index is out of range.
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        assert!(value.is_finite(), "non-finite matrix entry");
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_zero_row(&self, r: usize) -> bool {
        self.row(r).iter().all(|&v| v == 0.0)
    }

    pub fn is_zero_column(&self, c: usize) -> bool {
        (0..self.rows).all(|r| self.get(r, c) == 0.0)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix::from_vec_unchecked(self.rows, self.cols, self.data.iter().map(|v| alpha * v).collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return dim_err(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Entry-wise `self + t * (other - self)`. Entries that agree are copied
    /// unchanged, so untouched blocks stay bit-identical along a segment.
    pub fn lerp(&self, other: &Matrix, t: f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return dim_err("lerp between matrices of different shapes");
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| if a == b { a } else { a + t * (b - a) })
            .collect();
        Ok(Matrix::from_vec_unchecked(self.rows, self.cols, data))
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

pub fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn matvec(a: &Matrix, x: &Vector) -> Result<Vector> {
    if a.cols() != x.dim() {
        return dim_err(format!("matvec {}x{} by vector of dim {}", a.rows, a.cols, x.dim()));
    }
    Ok(Vector(matvec_slice(a, x.as_slice())))
}

pub(crate) fn matvec_slice(a: &Matrix, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.cols, x.len());
    (0..a.rows)
        .map(|r| a.row(r).iter().zip(x).map(|(w, v)| w * v).sum())
        .collect()
}

pub(crate) fn transpose_matvec_slice(a: &Matrix, y: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.rows, y.len());
    let mut out = vec![0.0; a.cols];
    for (r, &yr) in y.iter().enumerate() {
        if yr == 0.0 {
            continue;
        }
        for (o, &w) in out.iter_mut().zip(a.row(r)) {
            *o += w * yr;
        }
    }
    out
}

pub fn frobenius_norm(a: &Matrix) -> f64 {
    norm2(&a.data)
}

/// Result of [`spectral_norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralNorm {
    pub value: f64,
    pub iterations: usize,
    /// False when `max_iter` was hit before the relative change dropped below `tol`.
    pub converged: bool,
}

/// Largest singular value by power iteration on `AᵀA`.
///
/// The start vector is a fixed pseudo-random unit vector, so repeated calls
/// on the same matrix return identical results.
pub fn spectral_norm(a: &Matrix, tol: f64, max_iter: usize) -> Result<SpectralNorm> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "spectral norm tolerance must be > 0, got {tol}"
        )));
    }
    check_finite(&a.data, "spectral norm input")?;
    if a.rows == 0 || a.cols == 0 || a.data.iter().all(|&v| v == 0.0) {
        return Ok(SpectralNorm {
            value: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    let mut v = start_vector(a.cols);
    let mut lambda = 0.0;
    for it in 1..=max_iter {
        let av = matvec_slice(a, &v);
        let mut w = transpose_matvec_slice(a, &av);
        let next = norm2(&av).powi(2);
        let wn = norm2(&w);
        if wn == 0.0 {
            // Start vector landed in the null space; restart along a basis vector.
            v = vec![0.0; a.cols];
            v[it % a.cols] = 1.0;
            continue;
        }
        w.iter_mut().for_each(|x| *x /= wn);
        v = w;
        if it > 1 && (next - lambda).abs() <= tol * next {
            let sigma = norm2(&matvec_slice(a, &v));
            return Ok(SpectralNorm {
                value: sigma,
                iterations: it,
                converged: true,
            });
        }
        lambda = next;
    }
    let sigma = norm2(&matvec_slice(a, &v));
    Ok(SpectralNorm {
        value: sigma,
        iterations: max_iter,
        converged: false,
    })
}

/// [`spectral_norm`] with the default tolerance and iteration cap.
pub fn operator_norm(a: &Matrix) -> Result<f64> {
    spectral_norm(a, SPECTRAL_TOL, SPECTRAL_MAX_ITER).map(|s| s.value)
}

fn start_vector(n: usize) -> Vec<f64> {
    let mut state = POWER_ITERATION_SEED;
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            state = crate::dropout::splitmix64(state);
            // uniform in [0.5, 1.5): strictly positive keeps overlap with the top singular vector likely
            0.5 + (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect();
    let n = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_examples() {
        let x = Vector::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(matvec(&Matrix::identity(2), &x).unwrap().as_slice(), &[3.0, 4.0]);

        let a = Matrix::from_rows(&[vec![1.0, -1.0], vec![0.0, 2.0]]).unwrap();
        let ones = Vector::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(matvec(&a, &ones).unwrap().as_slice(), &[0.0, 2.0]);

        let z = Matrix::zeros(3, 2);
        assert_eq!(matvec(&z, &x).unwrap().as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn matvec_rejects_mismatch() {
        let x = Vector::new(vec![1.0; 3]).unwrap();
        assert!(matches!(matvec(&Matrix::identity(2), &x), Err(Error::Dimension(_))));
    }

    #[test]
    fn constructors_reject_non_finite() {
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(Vector::new(vec![f64::INFINITY]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn frobenius_examples() {
        assert!((frobenius_norm(&Matrix::identity(3)) - 3f64.sqrt()).abs() < 1e-15);
        let a = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert!((frobenius_norm(&a) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(frobenius_norm(&Matrix::zeros(2, 5)), 0.0);
    }

    #[test]
    fn spectral_examples() {
        for n in 1..6 {
            let s = spectral_norm(&Matrix::identity(n), SPECTRAL_TOL, SPECTRAL_MAX_ITER).unwrap();
            assert!((s.value - 1.0).abs() < 1e-12);
            assert!(s.converged);
        }
        let d = Matrix::diag(&[3.0, 1.0]).unwrap();
        assert!((operator_norm(&d).unwrap() - 3.0).abs() < 1e-9);
        assert_eq!(operator_norm(&Matrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn spectral_reports_non_convergence() {
        let d = Matrix::diag(&[1.0, 0.999_999]).unwrap();
        let s = spectral_norm(&d, 1e-15, 3).unwrap();
        assert!(!s.converged);
        assert_eq!(s.iterations, 3);
        assert!(spectral_norm(&d, 0.0, 10).is_err());
    }

    #[test]
    fn lerp_keeps_equal_entries_exact() {
        let a = Matrix::from_rows(&[vec![0.1, 0.7]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.1, 1.3]]).unwrap();
        let m = a.lerp(&b, 0.3).unwrap();
        assert_eq!(m.get(0, 0).to_bits(), 0.1f64.to_bits());
        assert!((m.get(0, 1) - 0.88).abs() < 1e-15);
    }
}
