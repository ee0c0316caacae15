//! Small dense linear algebra: square matrices and a growable Cholesky factor.
//!
//! The factor is stored packed by rows so that appending a data point only
//! pushes one row, and removing a point is a rank-one update of the trailing
//! block.

use crate::scalar::{dot_wide as dot, Real};

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn add_diagonal(&mut self, v: T) {
        for i in 0..self.n {
            self[(i, i)] = self[(i, i)] + v;
        }
    }

    pub fn max_diagonal(&self) -> T {
        (0..self.n).map(|i| self[(i, i)]).fold(T::zero(), T::max)
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.n).map(|i| dot(self.row(i), v)).collect()
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.n {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn frobenius(&self) -> T {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::from_fn(self.n, |i, j| self[(i, j)] - other[(i, j)])
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`, packed by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor<T> {
    n: usize,
    packed: Vec<T>,
}

#[inline]
fn offset(i: usize) -> usize {
    i * (i + 1) / 2
}

/// A pivot is accepted when it exceeds this fraction of the diagonal entry it
/// came from; anything smaller is indistinguishable from rounding noise.
fn pivot_floor<T: Real>(diag: T) -> T {
    T::epsilon() * diag.abs()
}

impl<T: Real> CholeskyFactor<T> {
    pub fn empty() -> Self {
        Self {
            n: 0,
            packed: Vec::new(),
        }
    }

    /// Factorizes a symmetric positive definite matrix. Returns `None` when a
    /// pivot is not safely positive.
    pub fn factorize(a: &Matrix<T>) -> Option<Self> {
        let n = a.dim();
        let mut l = Self {
            n: 0,
            packed: Vec::with_capacity(offset(n)),
        };
        for i in 0..n {
            let row: Vec<T> = a.row(i)[..i].to_vec();
            l.push_row(&row, a[(i, i)])?;
        }
        Some(l)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.packed[offset(i)..offset(i + 1)]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if j > i {
            T::zero()
        } else {
            self.packed[offset(i) + j]
        }
    }

    /// Extends the factor by one row/column of the underlying matrix:
    /// `cross` holds `A[n, 0..n]` and `diag` holds `A[n, n]`.
    pub fn push_row(&mut self, cross: &[T], diag: T) -> Option<()> {
        debug_assert_eq!(cross.len(), self.n);
        let c = self.solve_lower(cross);
        let pivot = diag - dot(&c, &c);
        if !pivot.is_finite() || pivot <= pivot_floor(diag) {
            return None;
        }
        self.packed.extend_from_slice(&c);
        self.packed.push(pivot.sqrt());
        self.n += 1;
        Some(())
    }

    /// Pivot that `push_row` would produce, without modifying the factor.
    pub fn schur_complement(&self, cross: &[T], diag: T) -> T {
        let c = self.solve_lower(cross);
        diag - dot(&c, &c)
    }

    /// Deletes row and column `k` of the underlying matrix.
    pub fn remove(&mut self, k: usize) {
        assert!(k < self.n, "row index out of range");
        let n = self.n;
        // Column k below the diagonal feeds a rank-one update of the trailing block.
        let mut v: Vec<T> = (k + 1..n).map(|i| self.get(i, k)).collect();
        let mut rows: Vec<Vec<T>> = (0..n).map(|i| self.row(i).to_vec()).collect();
        rows.remove(k);
        for row in rows.iter_mut().skip(k) {
            row.remove(k);
        }
        // Trailing block occupies rows k.. and columns k.. of the reduced factor.
        let m = n - 1;
        for j in 0..v.len() {
            let p = k + j;
            let ljj = rows[p][p];
            let r = (ljj * ljj + v[j] * v[j]).sqrt();
            let c = r / ljj;
            let s = v[j] / ljj;
            rows[p][p] = r;
            for (i, row) in rows.iter_mut().enumerate().take(m).skip(p + 1) {
                let vi = i - k;
                let lij = (row[p] + s * v[vi]) / c;
                v[vi] = c * v[vi] - s * lij;
                row[p] = lij;
            }
        }
        self.n = m;
        self.packed = rows.into_iter().flatten().collect();
    }

    /// Solves `L z = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let mut z = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let row = self.row(i);
            let s = b[i] - dot(&row[..i], &z);
            z.push(s / row[i]);
        }
        z
    }

    /// Solves `Lᵀ z = b`.
    pub fn solve_upper(&self, b: &[T]) -> Vec<T> {
        let mut z = b.to_vec();
        for i in (0..self.n).rev() {
            let zi = z[i] / self.get(i, i);
            z[i] = zi;
            let row = self.row(i);
            for j in 0..i {
                z[j] = z[j] - row[j] * zi;
            }
        }
        z
    }

    /// Solves `L Lᵀ z = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn log_det(&self) -> T {
        let two = T::from_f64(2.0);
        (0..self.n).fold(T::zero(), |acc, i| acc + two * self.get(i, i).ln())
    }

    /// Dense `(L Lᵀ)⁻¹`.
    pub fn inverse(&self) -> Matrix<T> {
        let n = self.n;
        let mut inv = Matrix::zeros(n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            let col = self.solve(&e);
            e[j] = T::zero();
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }

    /// Dense `L Lᵀ`.
    pub fn reconstruct(&self) -> Matrix<T> {
        Matrix::from_fn(self.n, |i, j| {
            let m = i.min(j);
            dot(&self.row(i)[..=m], &self.row(j)[..=m])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Matrix<f64> {
        // A = B Bᵀ + n I with a fixed, well-mixed B.
        let b = Matrix::from_fn(n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        let mut a = Matrix::from_fn(n, |i, j| dot(b.row(i), b.row(j)));
        a.add_diagonal(n as f64);
        a
    }

    #[test]
    fn factor_reconstructs() {
        let a = spd(6);
        let l = CholeskyFactor::factorize(&a).unwrap();
        assert!(l.reconstruct().sub(&a).frobenius() < 1e-12);
    }

    #[test]
    fn solve_matches_multiply() {
        let a = spd(5);
        let l = CholeskyFactor::factorize(&a).unwrap();
        let x = vec![1.0, -2.0, 0.5, 3.0, -1.0];
        let b = a.mul_vec(&x);
        let got = l.solve(&b);
        for (g, w) in got.iter().zip(&x) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn remove_matches_refactorization() {
        let a = spd(7);
        for k in 0..7 {
            let mut l = CholeskyFactor::factorize(&a).unwrap();
            l.remove(k);
            let keep: Vec<usize> = (0..7).filter(|&i| i != k).collect();
            let reduced = Matrix::from_fn(6, |i, j| a[(keep[i], keep[j])]);
            assert!(l.reconstruct().sub(&reduced).frobenius() < 1e-12, "k = {k}");
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut a = Matrix::<f64>::identity(3);
        a[(2, 2)] = -1.0;
        assert!(CholeskyFactor::factorize(&a).is_none());
    }

    #[test]
    fn inverse_and_log_det() {
        let a = spd(4);
        let l = CholeskyFactor::factorize(&a).unwrap();
        let inv = l.inverse();
        let prod = Matrix::from_fn(4, |i, j| {
            (0..4).map(|k| a[(i, k)] * inv[(k, j)]).sum::<f64>()
        });
        assert!(prod.sub(&Matrix::identity(4)).frobenius() < 1e-12);
        let diag_prod: f64 = (0..4).map(|i| l.get(i, i) * l.get(i, i)).product();
        assert!((l.log_det() - diag_prod.ln()).abs() < 1e-12);
    }
}
