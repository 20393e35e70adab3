//! Dense linear-algebra kernels: a small row-major matrix type, a cyclic
//! Jacobi symmetric eigensolver, Householder orthogonal complements and
//! induced matrix norms.

use std::ops::{Index, IndexMut};

use crate::error::{dim, input, Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
///
/// Zero-column matrices are allowed so that an orthogonal complement of a
/// full-rank basis can be represented.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
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

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major entries, rejecting non-finite values.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim(format!(
                "{} entries do not fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(input(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(dim("ragged rows"));
        }
        Self::from_row_major(rows.len(), cols, rows.concat())
    }

    pub fn from_columns(rows: usize, columns: &[Vec<T>]) -> Result<Self> {
        if columns.iter().any(|c| c.len() != rows) {
            return Err(dim("column length mismatch"));
        }
        let m = Self::from_fn(rows, columns.len(), |i, j| columns[j][i]);
        Self::from_row_major(m.rows, m.cols, m.data)
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

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[T]) {
        assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    /// Columns `range` as a new matrix.
    pub fn columns(&self, range: std::ops::Range<usize>) -> Self {
        Self::from_fn(self.rows, range.len(), |i, j| self[(i, range.start + j)])
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self * other`. Panics if the inner dimensions disagree.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * x`. Panics on dimension mismatch.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.cols, x.len(), "matvec dimension");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ * x`. Panics on dimension mismatch.
    pub fn tr_matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.rows, x.len(), "tr_matvec dimension");
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    /// `selfᵀ * self`, symmetrized.
    pub fn gram(&self) -> Self {
        let n = self.cols;
        let mut g = Self::zeros(n, n);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..n {
                let ra = r[a];
                if ra == T::zero() {
                    continue;
                }
                for b in a..n {
                    g.data[a * n + b] += ra * r[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                g.data[a * n + b] = g.data[b * n + a];
            }
        }
        g
    }

    /// `[self | other]`.
    pub fn hcat(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "hcat row count");
        Self::from_fn(self.rows, self.cols + other.cols, |i, j| {
            if j < self.cols {
                self[(i, j)]
            } else {
                other[(i, j - self.cols)]
            }
        })
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: T) {
        for a in &mut self.data {
            *a *= k;
        }
    }

    /// Multiplies column `j` by `factors[j]`.
    pub fn scale_columns(&self, factors: &[T]) -> Self {
        assert_eq!(factors.len(), self.cols);
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] * factors[j])
    }

    /// Multiplies row `i` by `factors[i]`.
    pub fn scale_rows(&self, factors: &[T]) -> Self {
        assert_eq!(factors.len(), self.rows);
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] * factors[i])
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.sub(other).max_abs()
    }

    /// Largest `|a_ij - a_ji|`. Panics if not square.
    pub fn asymmetry(&self) -> T {
        assert!(self.is_square());
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// `‖selfᵀself − I‖_max`: how far the columns are from orthonormal.
    pub fn orthonormality_defect(&self) -> T {
        self.gram().max_abs_diff(&Self::identity(self.cols))
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm2<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

/// Flips `v` so its first clearly nonzero component is positive.
fn canonical_sign<T: Scalar>(v: &mut [T]) {
    let scale = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let threshold = scale * T::epsilon().sqrt();
    if let Some(&first) = v.iter().find(|x| x.abs() > threshold) {
        if first < T::zero() {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Eigen-decomposition of a symmetric matrix, `A = V diag(d) Vᵀ`.
#[derive(Clone, Debug)]
pub struct SymEigResult<T> {
    /// Sorted descending.
    pub eigenvalues: Vec<T>,
    /// Column `k` pairs with `eigenvalues[k]`.
    pub eigenvectors: Matrix<T>,
}

impl<T: Scalar> SymEigResult<T> {
    pub fn reconstruct(&self) -> Matrix<T> {
        self.eigenvectors
            .scale_columns(&self.eigenvalues)
            .matmul(&self.eigenvectors.transpose())
    }
}

fn symmetry_tolerance<T: Scalar>() -> T {
    T::of(1e-9).max(T::epsilon() * T::of(64.0))
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Eigenvalues come back sorted descending; each eigenvector is signed so
/// its first nonzero component is positive.
pub fn sym_eig<T: Scalar>(a: &Matrix<T>) -> Result<SymEigResult<T>> {
    if !a.is_square() {
        return Err(dim(format!("sym_eig needs a square matrix, got {}x{}", a.rows, a.cols)));
    }
    if !a.is_finite() {
        return Err(input("sym_eig input has non-finite entries"));
    }
    let n = a.rows;
    let scale = a.max_abs();
    let tolerance = symmetry_tolerance::<T>() * scale.max(T::min_positive_value());
    let asym = a.asymmetry();
    if asym > tolerance {
        return Err(Error::Symmetry {
            asymmetry: asym.as_f64(),
            tolerance: tolerance.as_f64(),
        });
    }

    let mut m = a.clone();
    for i in 0..n {
        for j in 0..i {
            let avg = (m[(i, j)] + m[(j, i)]) * T::of(0.5);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let mut v = Matrix::identity(n);
    let fro2: T = m.data.iter().map(|&x| x * x).sum();
    let stop = fro2 * T::epsilon() * T::epsilon();

    for _sweep in 0..100 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                m[(p, q)] = T::zero();
                m[(q, p)] = T::zero();
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).expect("finite eigenvalues"));
    let eigenvalues = order.iter().map(|&i| m[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let mut col = v.column(i);
        canonical_sign(&mut col);
        eigenvectors.set_column(k, &col);
    }
    Ok(SymEigResult {
        eigenvalues,
        eigenvectors,
    })
}

/// Orthonormal basis of the orthogonal complement of `span(B)`, from the
/// Householder QR factorization of `B`: returns `Q_n` with `[B | Q_n]`
/// orthogonal (up to the column signs of `Q_r`).
pub fn qr_complement<T: Scalar>(b: &Matrix<T>) -> Result<Matrix<T>> {
    let (m, r) = (b.rows, b.cols);
    if r == 0 || r > m {
        return Err(dim(format!("qr_complement needs 0 < r <= m, got r={r}, m={m}")));
    }
    if !b.is_finite() {
        return Err(input("qr_complement input has non-finite entries"));
    }
    let defect = b.orthonormality_defect();
    let allowed = T::of(1e-8).max(T::epsilon() * T::of(256.0));
    if defect > allowed {
        // Distinguish collapsed columns from merely non-orthonormal ones.
        let eig = sym_eig(&b.gram())?;
        let smallest = *eig.eigenvalues.last().expect("r > 0");
        if smallest <= allowed {
            return Err(Error::Rank(format!(
                "basis columns are linearly dependent (smallest Gram eigenvalue {:e})",
                smallest.as_f64()
            )));
        }
        return Err(input(format!(
            "basis columns are not orthonormal (defect {:e})",
            defect.as_f64()
        )));
    }

    let mut a = b.clone();
    let mut reflectors: Vec<Vec<T>> = Vec::with_capacity(r);
    for k in 0..r {
        let x: Vec<T> = (k..m).map(|i| a[(i, k)]).collect();
        let xnorm = norm2(&x);
        if xnorm <= T::of(1e-8) {
            return Err(Error::Rank(format!("column {k} is dependent on earlier columns")));
        }
        let alpha = if x[0] >= T::zero() { -xnorm } else { xnorm };
        let mut vk = x;
        vk[0] -= alpha;
        let vnorm = norm2(&vk);
        vk.iter_mut().for_each(|e| *e /= vnorm);
        for j in k..r {
            let proj: T = (k..m).map(|i| vk[i - k] * a[(i, j)]).sum();
            for i in k..m {
                a[(i, j)] -= T::of(2.0) * vk[i - k] * proj;
            }
        }
        reflectors.push(vk);
    }

    let mut q_n = Matrix::zeros(m, m - r);
    for j in r..m {
        let mut e = vec![T::zero(); m];
        e[j] = T::one();
        for k in (0..r).rev() {
            let vk = &reflectors[k];
            let proj: T = (k..m).map(|i| vk[i - k] * e[i]).sum();
            for i in k..m {
                e[i] -= T::of(2.0) * vk[i - k] * proj;
            }
        }
        canonical_sign(&mut e);
        q_n.set_column(j - r, &e);
    }
    Ok(q_n)
}

/// Induced matrix norm `‖M‖_p` for `p ∈ {1, 2}`: maximum absolute column
/// sum, or the largest singular value.
pub fn induced_norm<T: Scalar>(mat: &Matrix<T>, p: u32) -> Result<T> {
    if !mat.is_square() {
        return Err(dim("induced_norm expects a square matrix"));
    }
    if !mat.is_finite() {
        return Err(input("induced_norm input has non-finite entries"));
    }
    match p {
        1 => Ok((0..mat.cols)
            .map(|j| (0..mat.rows).map(|i| mat[(i, j)].abs()).sum::<T>())
            .fold(T::zero(), T::max)),
        2 => {
            let eig = sym_eig(&mat.gram())?;
            Ok(eig.eigenvalues[0].max(T::zero()).sqrt())
        }
        other => Err(Error::Parameter(format!("induced norm p={other}; supported: 1, 2"))),
    }
}

/// Solves `A x = b` for symmetric positive-definite `A` by Cholesky.
/// Returns `None` when a pivot is not positive.
pub fn cholesky_solve<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Option<Vec<T>> {
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= T::zero() {
                    return None;
                }
                l[(i, i)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let s: T = (0..i).map(|k| l[(i, k)] * y[k]).sum();
        y[i] = (b[i] - s) / l[(i, i)];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let s: T = ((i + 1)..n).map(|k| l[(k, i)] * x[k]).sum();
        x[i] = (y[i] - s) / l[(i, i)];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        let mut a = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        for i in 0..n {
            for j in 0..i {
                a[(i, j)] = a[(j, i)];
            }
        }
        a
    }

    /// Real roots of `x³ + b x² + c x + d` via the trigonometric method.
    fn cubic_roots(b: f64, c: f64, d: f64) -> [f64; 3] {
        let p = c - b * b / 3.0;
        let q = 2.0 * b.powi(3) / 27.0 - b * c / 3.0 + d;
        let r = 2.0 * (-p / 3.0).sqrt();
        let phi = (3.0 * q / (p * r)).clamp(-1.0, 1.0).acos() / 3.0;
        let mut roots = [0.0; 3];
        for (k, root) in roots.iter_mut().enumerate() {
            *root = r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - b / 3.0;
        }
        roots.sort_by(|x, y| y.partial_cmp(x).unwrap());
        roots
    }

    /// Newton polish against the characteristic polynomial itself.
    fn polish(b: f64, c: f64, d: f64, mut x: f64) -> f64 {
        for _ in 0..20 {
            let f = ((x + b) * x + c) * x + d;
            let df = (3.0 * x + 2.0 * b) * x + c;
            if df == 0.0 {
                break;
            }
            x -= f / df;
        }
        x
    }

    #[test]
    fn identity_eigenvalues() {
        let eig = sym_eig(&Matrix::<f64>::identity(3)).unwrap();
        assert_eq!(eig.eigenvalues, vec![1.0, 1.0, 1.0]);
        assert!(eig.eigenvectors.orthonormality_defect() < 1e-15);
    }

    #[test]
    fn diagonal_eigenpairs() {
        let eig = sym_eig(&Matrix::from_diag(&[1.0, 4.0])).unwrap();
        assert_eq!(eig.eigenvalues, vec![4.0, 1.0]);
        assert_eq!(eig.eigenvectors.column(0), vec![0.0, 1.0]);
        assert_eq!(eig.eigenvectors.column(1), vec![1.0, 0.0]);
    }

    #[test]
    fn random_3x3_matches_cubic_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_symmetric(3, &mut rng);
            // det(xI - A) = x³ - tr(A) x² + c2 x - det(A)
            let tr = a[(0, 0)] + a[(1, 1)] + a[(2, 2)];
            let c2 = a[(0, 0)] * a[(1, 1)] + a[(0, 0)] * a[(2, 2)] + a[(1, 1)] * a[(2, 2)]
                - a[(0, 1)].powi(2)
                - a[(0, 2)].powi(2)
                - a[(1, 2)].powi(2);
            let det = a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
                - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
                + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)]);
            let roots = cubic_roots(-tr, c2, -det).map(|x| polish(-tr, c2, -det, x));
            let eig = sym_eig(&a).unwrap();
            for (got, want) in eig.eigenvalues.iter().zip(roots) {
                assert!((got - want).abs() <= 1e-8, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn reconstruction_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 5, 16, 40] {
            let a = random_symmetric(n, &mut rng);
            let eig = sym_eig(&a).unwrap();
            assert!(eig.reconstruct().max_abs_diff(&a) <= 1e-9 * a.max_abs());
            assert!(eig.eigenvectors.orthonormality_defect() <= 1e-10);
            assert!(eig.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn sym_eig_rejects_bad_input() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(Error::Symmetry { .. })));
        let mut b = Matrix::<f64>::identity(2);
        b[(0, 0)] = f64::NAN;
        assert!(matches!(sym_eig(&b), Err(Error::Input(_))));
        assert!(Matrix::from_row_major(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn complement_of_axis() {
        let b = Matrix::<f64>::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let q = qr_complement(&b).unwrap();
        assert_eq!(q.cols(), 1);
        assert!((q[(0, 0)]).abs() < 1e-15);
        assert!((q[(1, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn complement_of_diagonal() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let b = Matrix::from_rows(&[vec![h], vec![h]]).unwrap();
        let q = qr_complement(&b).unwrap();
        // hand orthogonalization: [1, -1]/√2 (positive first component)
        assert!((q[(0, 0)] - h).abs() < 1e-15);
        assert!((q[(1, 0)] + h).abs() < 1e-15);
        assert!(b.transpose().matmul(&q).max_abs() < 1e-15);
    }

    #[test]
    fn complement_of_full_basis_is_empty() {
        let q = qr_complement(&Matrix::<f64>::identity(4)).unwrap();
        assert_eq!((q.rows(), q.cols()), (4, 0));
    }

    #[test]
    fn complement_errors() {
        let b = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(qr_complement(&b), Err(Error::Dimension(_))));
        let dup = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(qr_complement(&dup), Err(Error::Rank(_))));
        let skew = Matrix::from_rows(&[vec![2.0], vec![0.0]]).unwrap();
        assert!(matches!(qr_complement(&skew), Err(Error::Input(_))));
    }

    #[test]
    fn induced_norm_examples() {
        assert_eq!(induced_norm(&Matrix::<f64>::identity(3), 2).unwrap(), 1.0);
        let d = Matrix::<f64>::from_diag(&[2.0, 0.5]);
        assert!((induced_norm(&d, 2).unwrap() - 2.0).abs() < 1e-15);
        let l = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(induced_norm(&l, 1).unwrap(), 2.0);
        assert!(matches!(induced_norm(&l, 3), Err(Error::Parameter(_))));
    }

    #[test]
    fn cholesky_matches_known_solution() {
        let a = Matrix::<f64>::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let x = cholesky_solve(&a, &[1.0, 2.0]).unwrap();
        // by hand: x = [1/11, 7/11]
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-15);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-15);
        assert!(cholesky_solve(&Matrix::from_diag(&[1.0, -1.0]), &[0.0, 0.0]).is_none());
    }

    #[test]
    fn works_in_single_precision() {
        let a = Matrix::<f32>::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let eig = sym_eig(&a).unwrap();
        assert!((eig.eigenvalues[0] - 3.0).abs() < 1e-5);
        assert!((eig.eigenvalues[1] - 1.0).abs() < 1e-5);
    }
}
