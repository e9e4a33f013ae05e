//! Dense row-major matrices and the handful of linear-algebra kernels the
//! search pipeline needs.

use std::fmt;

use crate::error::{Error, Result};

/// Relative tolerance below which a Gram-Schmidt residual counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(i)[..self.cols.min(8)])?;
        }
        Ok(())
    }
}

impl DenseMatrix {
    /// Builds a matrix from row-major entries. Fails on a length mismatch or
    /// any non-finite entry.
    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "from_row_major",
                left: (rows, cols),
                right: (entries.len(), 1),
            });
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.entries[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let mut entries = vec![0.0; rows * cols];
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::DimensionMismatch {
                    op: "from_columns",
                    left: (rows, cols),
                    right: (c.len(), 1),
                });
            }
            for (i, &x) in c.iter().enumerate() {
                entries[i * cols + j] = x;
            }
        }
        Self::from_row_major(rows, cols, entries)
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

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<f64> {
        self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.entries[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.entries[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
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

    /// `selfᵀ self`, the Gram matrix of the columns.
    pub fn gram(&self) -> Self {
        let c = self.cols;
        let mut g = Self::zeros(c, c);
        for i in 0..self.rows {
            let row = self.row(i);
            for a in 0..c {
                let ra = row[a];
                for b in a..c {
                    g.entries[a * c + b] += ra * row[b];
                }
            }
        }
        for a in 0..c {
            for b in 0..a {
                g.entries[a * c + b] = g.entries[b * c + a];
            }
        }
        g
    }

    /// `selfᵀ x`.
    pub fn transpose_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch {
                op: "transpose_matvec",
                left: self.shape(),
                right: (x.len(), 1),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        Ok(out)
    }

    /// Largest absolute entrywise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `‖selfᵀself − I‖_max`.
    pub fn orthonormality_error(&self) -> f64 {
        self.gram().max_abs_diff(&Self::identity(self.cols))
    }
}

/// Standard matrix-vector product `m · x`.
pub fn matvec(m: &DenseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != m.cols {
        return Err(Error::DimensionMismatch {
            op: "matvec",
            left: m.shape(),
            right: (x.len(), 1),
        });
    }
    Ok((0..m.rows).map(|i| dot(m.row(i), x)).collect())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

/// Modified Gram-Schmidt with one reorthogonalization pass, columns taken
/// left to right. Each column is accepted only if its residual keeps more than
/// `RANK_TOLERANCE` of its original norm.
pub fn orthonormalize(b: &DenseMatrix) -> Result<DenseMatrix> {
    let (q, rejected) = gram_schmidt(b, true)?;
    debug_assert!(rejected.is_empty());
    DenseMatrix::from_columns(b.rows(), &q)
}

/// Rank-revealing variant: deficient columns are skipped instead of
/// rejected. Returns the orthonormal basis of the column space and the
/// skipped column indices.
pub fn column_space_basis(b: &DenseMatrix) -> Result<(DenseMatrix, Vec<usize>)> {
    let (q, rejected) = gram_schmidt(b, false)?;
    Ok((DenseMatrix::from_columns(b.rows(), &q)?, rejected))
}

fn gram_schmidt(b: &DenseMatrix, strict: bool) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(b.cols());
    let mut rejected = Vec::new();
    for j in 0..b.cols() {
        let mut v = b.column(j);
        let original = norm2(&v);
        if original > 0.0 && basis.len() < b.rows() {
            for _pass in 0..2 {
                for q in &basis {
                    let c = dot(q, &v);
                    for (vi, qi) in v.iter_mut().zip(q) {
                        *vi -= c * qi;
                    }
                }
            }
        }
        let residual = norm2(&v);
        if original == 0.0 || residual <= RANK_TOLERANCE * original || basis.len() == b.rows() {
            if strict {
                return Err(Error::RankDeficient { column: j });
            }
            rejected.push(j);
            continue;
        }
        v.iter_mut().for_each(|x| *x /= residual);
        basis.push(v);
    }
    Ok((basis, rejected))
}

/// Solves a small square system by Gaussian elimination with partial
/// pivoting. `None` when a pivot falls below `tol` times the largest entry.
pub(crate) fn lu_solve(a: &[f64], n: usize, rhs: &[f64], tol: f64) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = rhs.to_vec();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| m[p * n + col].abs().total_cmp(&m[q * n + col].abs()))
            .expect("non-empty range");
        if m[pivot * n + col].abs() <= tol * scale {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                m.swap(pivot * n + k, col * n + k);
            }
            x.swap(pivot, col);
        }
        for row in col + 1..n {
            let f = m[row * n + col] / m[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= f * m[col * n + k];
            }
            x[row] -= f * x[col];
        }
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            x[i] -= m[i * n + k] * x[k];
        }
        x[i] /= m[i * n + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        let e = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseMatrix::from_row_major(rows, cols, e).unwrap()
    }

    #[test]
    fn matvec_identity_and_zero() {
        let y = matvec(&DenseMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
        let y = matvec(&DenseMatrix::zeros(2, 3), &[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn matvec_small_hand_example() {
        let m = DenseMatrix::from_row_major(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // naive loop
        let x = [1.0, 1.0];
        let mut expect = [0.0; 2];
        for i in 0..2 {
            for j in 0..2 {
                expect[i] += m.get(i, j) * x[j];
            }
        }
        assert_eq!(expect, [3.0, 7.0]);
        assert_eq!(matvec(&m, &x).unwrap(), expect.to_vec());
    }

    #[test]
    fn matvec_reports_both_shapes() {
        let err = matvec(&DenseMatrix::zeros(2, 3), &[1.0, 2.0]).unwrap_err();
        match err {
            Error::DimensionMismatch { left, right, .. } => {
                assert_eq!(left, (2, 3));
                assert_eq!(right, (2, 1));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn matvec_matches_naive_loop_on_large_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(r, c) in &[(1, 1), (17, 5), (200, 200), (3, 150)] {
            let m = random_matrix(&mut rng, r, c);
            let x: Vec<f64> = (0..c).map(|_| rng.random_range(-10.0..10.0)).collect();
            let got = matvec(&m, &x).unwrap();
            for i in 0..r {
                let mut s = 0.0;
                for j in 0..c {
                    s += m.entries()[i * c + j] * x[j];
                }
                let scale = (0..c).map(|j| (m.get(i, j) * x[j]).abs()).sum::<f64>();
                assert!((got[i] - s).abs() <= 1e-12 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn rejects_non_finite_entries() {
        assert!(matches!(
            DenseMatrix::from_row_major(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn orthonormal_input_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = orthonormalize(&random_matrix(&mut rng, 9, 4)).unwrap();
        let again = orthonormalize(&q).unwrap();
        assert!(again.max_abs_diff(&q) <= 1e-12);
    }

    #[test]
    fn single_column_is_normalized() {
        let b = DenseMatrix::from_row_major(2, 1, vec![2.0, 0.0]).unwrap();
        let q = orthonormalize(&b).unwrap();
        assert_eq!(q.entries(), &[1.0, 0.0]);
    }

    #[test]
    fn random_tall_matrix_keeps_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = random_matrix(&mut rng, 10, 3);
        let q = orthonormalize(&b).unwrap();
        assert!(q.orthonormality_error() <= 1e-10);
        // projection-residual oracle: each original column lies in span(q)
        for col in b.columns() {
            let coeffs = q.transpose_matvec(&col).unwrap();
            let proj = matvec(&q, &coeffs).unwrap();
            let res: Vec<f64> = col.iter().zip(&proj).map(|(a, b)| a - b).collect();
            assert!(norm2(&res) <= 1e-8);
        }
    }

    #[test]
    fn deficient_column_is_named() {
        // third column = first + second
        let b = DenseMatrix::from_columns(
            4,
            &[
                vec![1.0, 0.0, 2.0, 0.0],
                vec![0.0, 1.0, 0.0, 3.0],
                vec![1.0, 1.0, 2.0, 3.0],
            ],
        )
        .unwrap();
        assert!(matches!(
            orthonormalize(&b),
            Err(Error::RankDeficient { column: 2 })
        ));
        let (basis, skipped) = column_space_basis(&b).unwrap();
        assert_eq!(basis.cols(), 2);
        assert_eq!(skipped, vec![2]);
    }

    #[test]
    fn wide_matrix_basis_is_capped_at_row_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = random_matrix(&mut rng, 3, 5);
        let (basis, skipped) = column_space_basis(&b).unwrap();
        assert_eq!(basis.shape(), (3, 3));
        assert_eq!(skipped, vec![3, 4]);
    }

    #[test]
    fn small_lu_solve() {
        let a = [0.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let b = [1.0, 2.0, 3.0];
        let x = lu_solve(&a, 3, &b, 1e-14).unwrap();
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-12);
        }
        assert!(lu_solve(&[1.0, 2.0, 2.0, 4.0], 2, &[1.0, 1.0], 1e-12).is_none());
    }
}
