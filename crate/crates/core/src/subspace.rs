//! Subspace models, collections, and queries.


use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Maximum deviation of `BᵀB` from the identity accepted for a basis.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-10;

/// A rank-`r` linear subspace of `R^D`, stored as an orthonormal basis.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceModel {
    id: usize,
    basis: DenseMatrix,
}

impl SubspaceModel {
    pub fn new(id: usize, basis: DenseMatrix) -> Result<Self> {
        let (ambient, rank) = basis.shape();
        if rank == 0 || rank >= ambient {
            return Err(Error::invalid(format!(
                "subspace rank must satisfy 1 <= r < D, got r={rank}, D={ambient}"
            )));
        }
        let err = basis.orthonormality_error();
        if err > ORTHONORMAL_TOLERANCE {
            return Err(Error::invalid(format!(
                "basis columns are not orthonormal (Gram error {err:e})"
            )));
        }
        Ok(Self { id, basis })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn basis(&self) -> &DenseMatrix {
        &self.basis
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn rank(&self) -> usize {
        self.basis.cols()
    }

    pub(crate) fn with_id(mut self, id: usize) -> Self {
        self.id = id;
        self
    }
}

/// `n ≥ 2` subspaces sharing ambient dimension and rank, ids `0..n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceCollection {
    models: Vec<SubspaceModel>,
}

impl SubspaceCollection {
    pub fn new(models: Vec<SubspaceModel>) -> Result<Self> {
        if models.len() < 2 {
            return Err(Error::invalid("a collection needs at least two subspaces"));
        }
        let (d, r) = (models[0].ambient_dim(), models[0].rank());
        for (i, m) in models.iter().enumerate() {
            if m.id() != i {
                return Err(Error::invalid(format!(
                    "subspace ids must be contiguous from 0; position {i} holds id {}",
                    m.id()
                )));
            }
            if m.ambient_dim() != d || m.rank() != r {
                return Err(Error::DimensionMismatch {
                    op: "SubspaceCollection::new",
                    left: (d, r),
                    right: (m.ambient_dim(), m.rank()),
                });
            }
        }
        Ok(Self { models })
    }

    pub fn models(&self) -> &[SubspaceModel] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.models[0].ambient_dim()
    }

    pub fn rank(&self) -> usize {
        self.models[0].rank()
    }

    pub fn get(&self, id: usize) -> Option<&SubspaceModel> {
        self.models.get(id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryVector {
    values: Vec<f64>,
    label: Option<usize>,
}

impl QueryVector {
    pub fn new(values: Vec<f64>, label: Option<usize>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("query"));
        }
        Ok(Self { values, label })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|x| c * x).collect(), self.label)
    }
}

/// ℓ1 distance from a query to one subspace, with the coefficients of a
/// minimizing point. Coefficients are not unique in degenerate cases; only
/// the distance is.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceRecord {
    pub subspace_id: usize,
    pub distance: f64,
    pub coeffs: Vec<f64>,
}

/// Fits an `r`-dimensional subspace to the columns of `samples` (`D × m`)
/// using the top `r` left singular vectors. Each singular vector is signed so
/// its largest-magnitude entry is positive.
pub fn fit_subspace(samples: &DenseMatrix, r: usize) -> Result<SubspaceModel> {
    let (ambient, m) = samples.shape();
    if r == 0 {
        return Err(Error::invalid("rank must be at least 1"));
    }
    if m < r {
        return Err(Error::invalid(format!(
            "need at least r={r} samples, got {m}"
        )));
    }
    if r >= ambient {
        return Err(Error::invalid(format!(
            "rank r={r} must be below the ambient dimension {ambient}"
        )));
    }
    let a = faer::Mat::from_fn(ambient, m, |i, j| samples.get(i, j));
    let svd = a
        .thin_svd()
        .map_err(|_| Error::invalid("singular value decomposition did not converge"))?;
    let u = svd.U();
    let sv = svd.S().column_vector();

    let mut order: Vec<usize> = (0..sv.nrows()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]).then(i.cmp(&j)));
    let top = sv[order[0]];
    let rank = order
        .iter()
        .take_while(|&&i| top > 0.0 && sv[i] > crate::matrix::RANK_TOLERANCE * top)
        .count();
    if rank < r {
        return Err(Error::invalid(format!(
            "sample matrix has numerical rank {rank} < r={r}"
        )));
    }

    let columns: Vec<Vec<f64>> = order[..r]
        .iter()
        .map(|&k| {
            let mut c: Vec<f64> = (0..ambient).map(|i| u[(i, k)]).collect();
            let pivot = c
                .iter()
                .copied()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map(|(_, v)| v)
                .unwrap_or(0.0);
            if pivot < 0.0 {
                c.iter_mut().for_each(|x| *x = -*x);
            }
            c
        })
        .collect();
    let basis = DenseMatrix::from_columns(ambient, &columns)?;
    // SVD output is orthonormal to machine precision; re-run Gram-Schmidt
    // only if the library returned something looser.
    let basis = if basis.orthonormality_error() > ORTHONORMAL_TOLERANCE {
        crate::matrix::orthonormalize(&basis)?
    } else {
        basis
    };
    SubspaceModel::new(0, basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{matvec, norm2, orthonormalize};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        let e = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        DenseMatrix::from_row_major(rows, cols, e).unwrap()
    }

    fn span_residual(basis: &DenseMatrix, v: &[f64]) -> f64 {
        let c = basis.transpose_matvec(v).unwrap();
        let p = matvec(basis, &c).unwrap();
        norm2(&v.iter().zip(&p).map(|(a, b)| a - b).collect::<Vec<_>>())
    }

    #[test]
    fn multiples_of_one_vector() {
        let v = [1.0, -2.0, 0.5, 3.0];
        let cols: Vec<Vec<f64>> = [1.0, -3.0, 0.25].iter().map(|c| v.iter().map(|x| c * x).collect()).collect();
        let s = fit_subspace(&DenseMatrix::from_columns(4, &cols).unwrap(), 1).unwrap();
        assert!(span_residual(s.basis(), &v) < 1e-12);
        // sign convention: largest entry (3.0 direction) positive
        assert!(s.basis().get(3, 0) > 0.0);
    }

    #[test]
    fn identity_columns_rank_three_in_r4() {
        let mut samples = DenseMatrix::zeros(4, 3);
        let mut e = samples.clone().into_entries();
        for j in 0..3 {
            e[j * 3 + j] = 1.0;
        }
        samples = DenseMatrix::from_row_major(4, 3, e).unwrap();
        let s = fit_subspace(&samples, 3).unwrap();
        assert!(s.basis().orthonormality_error() < 1e-12);
        for j in 0..3 {
            assert!(span_residual(s.basis(), &samples.column(j)) < 1e-12);
        }
    }

    #[test]
    fn identity_columns_of_r3_span_everything() {
        // r = D is not a proper subspace; the model rejects it.
        let err = fit_subspace(&DenseMatrix::identity(3), 3).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn noisy_rank_two_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gen = orthonormalize(&gaussian(&mut rng, 8, 2)).unwrap();
        let coeffs = gaussian(&mut rng, 2, 12);
        let clean = gen.matmul(&coeffs).unwrap();
        let noisy: Vec<f64> = clean
            .entries()
            .iter()
            .map(|x| x + 1e-9 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let samples = DenseMatrix::from_row_major(8, 12, noisy).unwrap();
        let s = fit_subspace(&samples, 2).unwrap();
        for col in samples.columns() {
            assert!(span_residual(s.basis(), &col) <= 1e-6);
        }
    }

    #[test]
    fn exactly_low_rank_tall_samples() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gen = orthonormalize(&gaussian(&mut rng, 60, 2)).unwrap();
            let samples = gen.matmul(&gaussian(&mut rng, 2, 5)).unwrap();
            let s = fit_subspace(&samples, 2).unwrap();
            for col in gen.columns() {
                assert!(span_residual(s.basis(), &col) <= 1e-10, "seed {seed}");
            }
        }
    }

    #[test]
    fn too_few_samples_or_low_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(fit_subspace(&gaussian(&mut rng, 6, 2), 3).is_err());
        let v = gaussian(&mut rng, 6, 1).into_entries();
        let cols = vec![v.clone(), v.iter().map(|x| 2.0 * x).collect(), v];
        assert!(fit_subspace(&DenseMatrix::from_columns(6, &cols).unwrap(), 2).is_err());
    }

    #[test]
    fn permutation_of_samples_keeps_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples = gaussian(&mut rng, 10, 6);
        let a = fit_subspace(&samples, 3).unwrap();
        let mut cols = samples.columns();
        cols.reverse();
        cols.swap(0, 3);
        let b = fit_subspace(&DenseMatrix::from_columns(10, &cols).unwrap(), 3).unwrap();
        for col in b.basis().columns() {
            assert!(span_residual(a.basis(), &col) <= 1e-8);
        }
    }

    #[test]
    fn collection_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = |id, rng: &mut ChaCha8Rng| {
            SubspaceModel::new(id, orthonormalize(&gaussian(rng, 5, 2)).unwrap()).unwrap()
        };
        let a = m(0, &mut rng);
        let b = m(1, &mut rng);
        assert!(SubspaceCollection::new(vec![a.clone()]).is_err());
        assert!(SubspaceCollection::new(vec![a.clone(), b.clone().with_id(2)]).is_err());
        let c = SubspaceCollection::new(vec![a, b]).unwrap();
        assert_eq!((c.len(), c.ambient_dim(), c.rank()), (2, 5, 2));
        assert!(SubspaceModel::new(0, gaussian(&mut rng, 5, 2)).is_err());
    }
}
