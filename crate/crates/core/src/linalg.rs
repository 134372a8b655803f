//! Small dense linear algebra: row-major matrices, Gram products and
//! Cholesky-based solves. Model dimensions here are a handful of columns, so
//! nothing is blocked or vectorised beyond what the compiler does.

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * p);
        for r in rows {
            assert_eq!(r.len(), p, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::from_row_major(n, p, data)
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ * v`.
    pub fn tr_mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(self.row(i)) {
                *o += x * vi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// `Xᵀ diag(w) X`, or `XᵀX` when `w` is `None`.
pub fn weighted_gram<T: Real>(x: &Matrix<T>, w: Option<&[T]>) -> Matrix<T> {
    let p = x.ncols();
    let mut g = Matrix::zeros(p, p);
    for i in 0..x.nrows() {
        let r = x.row(i);
        let wi = w.map_or(T::one(), |w| w[i]);
        if wi == T::zero() {
            continue;
        }
        for a in 0..p {
            let ra = r[a] * wi;
            if ra == T::zero() {
                continue;
            }
            for b in 0..=a {
                g[(a, b)] += ra * r[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            g[(b, a)] = g[(a, b)];
        }
    }
    g
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
}

impl<T: Real> Cholesky<T> {
    /// Strict factorisation; `None` when a pivot is not strictly positive.
    pub fn new(a: &Matrix<T>) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "cholesky of non-square matrix");
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(Self { lower: l })
    }

    /// Factorises `a`, retrying once with `jitter · max(1, max diag)` added to
    /// the diagonal. The flag reports whether the jitter was needed.
    pub fn with_jitter(a: &Matrix<T>, jitter: T) -> Option<(Self, bool)> {
        if let Some(c) = Self::new(a) {
            return Some((c, false));
        }
        let scale = a.diagonal().into_iter().fold(T::one(), |m, d| m.max(d.abs()));
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += jitter * scale;
        }
        Self::new(&b).map(|c| (c, true))
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let l = &self.lower;
        let n = l.nrows();
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.lower.nrows();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = T::zero());
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        // symmetrise away rounding asymmetry
        for i in 0..n {
            for j in 0..i {
                let m = (inv[(i, j)] + inv[(j, i)]) / T::lit(2.0);
                inv[(i, j)] = m;
                inv[(j, i)] = m;
            }
        }
        inv
    }
}

/// Square root factor `L` with `L Lᵀ ≈ A` for a symmetric positive
/// semi-definite `A`. Pivots at or below `tol · max diag` are treated as zero,
/// so a zero matrix yields a zero factor.
pub fn psd_sqrt<T: Real>(a: &Matrix<T>) -> Matrix<T> {
    let n = a.nrows();
    let maxd = a.diagonal().into_iter().fold(T::zero(), |m, d| m.max(d.abs()));
    let tol = maxd * T::epsilon() * T::from_count(n.max(1)) * T::lit(16.0);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    l
}

/// True when the columns of `x` are numerically linearly independent. Works on
/// the correlation-scaled Gram matrix so column scale does not matter.
pub fn has_full_column_rank<T: Real>(x: &Matrix<T>, tol: T) -> bool {
    let p = x.ncols();
    if x.nrows() < p {
        return false;
    }
    let g = weighted_gram(x, None);
    let d: Vec<T> = g.diagonal();
    if d.iter().any(|&v| !(v > T::zero())) {
        return false;
    }
    let mut s = g.clone();
    for i in 0..p {
        for j in 0..p {
            s[(i, j)] = g[(i, j)] / (d[i] * d[j]).sqrt();
        }
    }
    let mut l = Matrix::zeros(p, p);
    for j in 0..p {
        let mut dj = s[(j, j)];
        for k in 0..j {
            dj -= l[(j, k)] * l[(j, k)];
        }
        if dj <= tol {
            return false;
        }
        let r = dj.sqrt();
        l[(j, j)] = r;
        for i in (j + 1)..p {
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / r;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd() -> Matrix<f64> {
        Matrix::from_rows(&[
            vec![4.0, 2.0, 0.6],
            vec![2.0, 5.0, 1.0],
            vec![0.6, 1.0, 3.0],
        ])
    }

    #[test]
    fn cholesky_inverse_is_inverse() {
        let a = spd();
        let inv = Cholesky::new(&a).unwrap().inverse();
        let id = a.matmul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(id[(i, j)], e, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn solve_matches_product() {
        let a = spd();
        let x = vec![1.0, -2.0, 0.5];
        let b = a.mul_vec(&x);
        let got = Cholesky::new(&a).unwrap().solve(&b);
        for (g, e) in got.iter().zip(&x) {
            assert_relative_eq!(*g, *e, epsilon = 1e-12);
        }
    }

    #[test]
    fn singular_fails_strict_but_jitter_recovers() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(Cholesky::new(&a).is_none());
        let (_, jittered) = Cholesky::with_jitter(&a, 1e-10).unwrap();
        assert!(jittered);
    }

    #[test]
    fn psd_sqrt_of_zero_is_zero() {
        let l = psd_sqrt(&Matrix::<f64>::zeros(3, 3));
        assert_eq!(l.max_abs(), 0.0);
        let a = spd();
        let l = psd_sqrt(&a);
        let back = l.matmul(&l.transpose());
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(back[(i, j)], a[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rank_detection() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![1.0, 1.0, 2.0],
            vec![1.0, 2.0, 4.0],
            vec![1.0, 3.0, 6.0],
        ]);
        assert!(!has_full_column_rank(&x, 1e-10));
        let y = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 3.0]]);
        assert!(has_full_column_rank(&y, 1e-10));
    }

    #[test]
    fn gram_weights() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, -1.0]]);
        let g = weighted_gram(&x, Some(&[2.0, 1.0]));
        assert_eq!(g, Matrix::from_rows(&[vec![3.0, 3.0], vec![3.0, 9.0]]));
        assert_eq!(x.tr_mul_vec(&[1.0, 1.0]), vec![2.0, 1.0]);
    }
}
