//! Sketched nearest-subspace search.
//!
//! Preprocessing samples one Cauchy sketch `P_t` per trial and stores an
//! orthonormal basis of `P_t · span(B_i)` for every subspace. A query is
//! projected with each `P_t`, its ℓ1 distance to every sketched subspace is
//! solved in `R^d`, and the `n_back` closest ids of each trial are pooled.
//! With verification on, the pooled candidates are re-ranked by their ambient
//! ℓ1 distance; otherwise by their smallest sketched distance over trials.
//! Ties are always broken toward the lower subspace id.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::cauchy::{sample_sketch, RngSpec, SketchMatrix};
use crate::error::{Error, Result};
use crate::io::{read_f64, read_matrix_binary, read_u32, read_u64, write_matrix_binary};
use crate::l1_solver::{distance_to_subspace, solve_l1, SolveStatus, SolverOptions};
use crate::matrix::{column_space_basis, DenseMatrix};
use crate::subspace::{DistanceRecord, QueryVector, SubspaceCollection, SubspaceModel};

pub const INDEX_MAGIC: &[u8; 7] = b"L1NSIDX";
pub const INDEX_VERSION: u32 = 1;

/// Default `alpha` for [`suggest_dimension`].
pub const DEFAULT_ALPHA: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    /// Sketch dimension.
    pub d: usize,
    pub trials: usize,
    /// Candidates kept per trial.
    pub n_back: usize,
    pub alpha: f64,
    pub seed: u64,
    pub sketch_solver: SolverOptions,
    pub ambient_solver: SolverOptions,
    pub verify: bool,
}

impl SearchConfig {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            trials: 1,
            n_back: 1,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            sketch_solver: SolverOptions::default(),
            ambient_solver: SolverOptions::default(),
            verify: false,
        }
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_n_back(mut self, n_back: usize) -> Self {
        self.n_back = n_back;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_verify(mut self, verify: bool) -> Self {
        self.verify = verify;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// Checks `1 ≤ n_back ≤ n`, `1 ≤ d < D`, `0 < alpha < 1`, `trials ≥ 1`.
    pub fn validate(&self, n: usize, ambient_dim: usize) -> Result<()> {
        if self.d == 0 || self.d >= ambient_dim {
            return Err(Error::invalid(format!(
                "sketch dimension must satisfy 1 <= d < D, got d={}, D={ambient_dim}",
                self.d
            )));
        }
        self.validate_query(n)?;
        if self.trials == 0 {
            return Err(Error::invalid("at least one trial is required"));
        }
        self.sketch_solver.validate()?;
        self.ambient_solver.validate()
    }

    fn validate_query(&self, n: usize) -> Result<()> {
        if self.n_back == 0 || self.n_back > n {
            return Err(Error::invalid(format!(
                "n_back must satisfy 1 <= n_back <= n={n}, got {}",
                self.n_back
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Sketch dimension `ceil((r ln n)^(1/alpha))` with leading constant 1.
///
/// For `r = 9`, `n = 38` and `alpha → 1` this gives 33.
pub fn suggest_dimension(r: usize, n: usize, alpha: f64) -> Result<usize> {
    if n <= r {
        return Err(Error::invalid(format!(
            "the dimension rule assumes more subspaces than their rank (n > r), got n={n}, r={r}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let base = r as f64 * (n as f64).ln();
    let d = base.powf(1.0 / alpha).ceil();
    if !d.is_finite() || d > usize::MAX as f64 {
        return Err(Error::invalid("suggested dimension overflows"));
    }
    Ok((d as usize).max(1))
}

/// Parameters persisted with an index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndexParams {
    pub seed: u64,
    pub alpha: f64,
    pub n_back: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SketchedIndex {
    sketches: Vec<SketchMatrix>,
    /// `sketched_bases[t][i]`: orthonormal basis of `P_t · span(B_i)`.
    sketched_bases: Vec<Vec<DenseMatrix>>,
    n: usize,
    ambient_dim: usize,
    rank: usize,
    params: IndexParams,
    ambient: Option<SubspaceCollection>,
}

impl SketchedIndex {
    pub fn sketches(&self) -> &[SketchMatrix] {
        &self.sketches
    }

    pub fn sketched_bases(&self) -> &[Vec<DenseMatrix>] {
        &self.sketched_bases
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn trials(&self) -> usize {
        self.sketches.len()
    }

    /// Sketch dimension `d`.
    pub fn dim(&self) -> usize {
        self.sketches[0].dim()
    }

    pub fn params(&self) -> IndexParams {
        self.params
    }

    /// The ambient collection, needed for verification.
    pub fn ambient(&self) -> Option<&SubspaceCollection> {
        self.ambient.as_ref()
    }

    /// Drops the ambient bases; the index can then answer only unverified
    /// queries.
    pub fn without_ambient(mut self) -> Self {
        self.ambient = None;
        self
    }

    /// Serializes the index.
    ///
    /// Layout (little-endian): `b"L1NSIDX"`, version `u32`, then `n`, `D`,
    /// `r`, `T`, `d` as `u64`; seed `u64`, alpha `f64`, n_back `u64`; each
    /// `P_t` as a binary matrix; every sketched basis, trial-major and
    /// id-minor, as a binary matrix. A trailing section holds the count of
    /// ambient bases (`u64`, either 0 or `n`) followed by those bases.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        for v in [self.n, self.ambient_dim, self.rank, self.trials(), self.dim()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.params.seed.to_le_bytes())?;
        w.write_all(&self.params.alpha.to_le_bytes())?;
        w.write_all(&(self.params.n_back as u64).to_le_bytes())?;
        for s in &self.sketches {
            write_matrix_binary(w, s.matrix())?;
        }
        for trial in &self.sketched_bases {
            for b in trial {
                write_matrix_binary(w, b)?;
            }
        }
        match &self.ambient {
            Some(c) => {
                w.write_all(&(c.len() as u64).to_le_bytes())?;
                for m in c.models() {
                    write_matrix_binary(w, m.basis())?;
                }
            }
            None => w.write_all(&0u64.to_le_bytes())?,
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(Error::format("index", "bad magic bytes"));
        }
        let version = read_u32(r)?;
        if version != INDEX_VERSION {
            return Err(Error::format("index", format!("unsupported version {version}")));
        }
        let mut header = [0usize; 5];
        for h in header.iter_mut() {
            *h = read_u64(r)? as usize;
        }
        let [n, ambient_dim, rank, trials, d] = header;
        let params = IndexParams {
            seed: read_u64(r)?,
            alpha: read_f64(r)?,
            n_back: read_u64(r)? as usize,
        };
        if n < 2 || trials == 0 || d == 0 || d > ambient_dim || rank == 0 || rank >= ambient_dim {
            return Err(Error::format("index", format!("inconsistent header {header:?}")));
        }
        let mut sketches = Vec::with_capacity(trials);
        for t in 0..trials {
            let p = read_matrix_binary(r)?;
            if p.shape() != (d, ambient_dim) {
                return Err(Error::format(
                    "index",
                    format!("sketch {t} has shape {:?}, expected ({d}, {ambient_dim})", p.shape()),
                ));
            }
            sketches.push(SketchMatrix::from_parts(p, RngSpec::new(params.seed, t as u64))?);
        }
        let expected_cols = d.min(rank);
        let mut sketched_bases = Vec::with_capacity(trials);
        for t in 0..trials {
            let mut row = Vec::with_capacity(n);
            for i in 0..n {
                let b = read_matrix_binary(r)?;
                if b.shape() != (d, expected_cols) {
                    return Err(Error::format(
                        "index",
                        format!("sketched basis ({t}, {i}) has shape {:?}", b.shape()),
                    ));
                }
                row.push(b);
            }
            sketched_bases.push(row);
        }
        let count = read_u64(r)? as usize;
        let ambient = match count {
            0 => None,
            c if c == n => {
                let models = (0..n)
                    .map(|i| SubspaceModel::new(i, read_matrix_binary(r)?))
                    .collect::<Result<Vec<_>>>()?;
                let c = SubspaceCollection::new(models)?;
                if c.ambient_dim() != ambient_dim || c.rank() != rank {
                    return Err(Error::format("index", "ambient bases disagree with header"));
                }
                Some(c)
            }
            c => {
                return Err(Error::format(
                    "index",
                    format!("{c} ambient bases for {n} subspaces"),
                ))
            }
        };
        Ok(Self {
            sketches,
            sketched_bases,
            n,
            ambient_dim,
            rank,
            params,
            ambient,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut slice = bytes;
        let idx = Self::read_from(&mut slice)?;
        if !slice.is_empty() {
            return Err(Error::format("index", "trailing bytes"));
        }
        Ok(idx)
    }
}

/// Samples `T` sketches on streams `0..T` of `config.seed` and projects every
/// subspace through each of them.
pub fn build_index(collection: &SubspaceCollection, config: &SearchConfig) -> Result<SketchedIndex> {
    config.validate(collection.len(), collection.ambient_dim())?;
    let sketches = (0..config.trials)
        .map(|t| sample_sketch(RngSpec::new(config.seed, t as u64), config.d, collection.ambient_dim()))
        .collect::<Result<Vec<_>>>()?;
    build_index_with_sketches(collection, sketches, config)
}

/// Builds an index from caller-supplied sketches (for example the identity
/// sketch). All sketches must share one shape `d × D` with `d ≤ D`.
pub fn build_index_with_sketches(
    collection: &SubspaceCollection,
    sketches: Vec<SketchMatrix>,
    config: &SearchConfig,
) -> Result<SketchedIndex> {
    config.validate_query(collection.len())?;
    let ambient_dim = collection.ambient_dim();
    let Some(first) = sketches.first() else {
        return Err(Error::invalid("at least one sketch is required"));
    };
    let d = first.dim();
    for s in &sketches {
        if s.ambient_dim() != ambient_dim || s.dim() != d {
            return Err(Error::DimensionMismatch {
                op: "build_index",
                left: (d, ambient_dim),
                right: s.matrix().shape(),
            });
        }
    }
    let n = collection.len();
    let rank = collection.rank();
    // When d ≤ r the projected subspace generically fills all of R^d.
    let expected = d.min(rank);

    let cells: Vec<(usize, usize)> = (0..sketches.len())
        .flat_map(|t| (0..n).map(move |i| (t, i)))
        .collect();
    let flat = cells
        .par_iter()
        .map(|&(t, i)| {
            let projected = sketches[t].matrix().matmul(collection.models()[i].basis())?;
            let (basis, skipped) = column_space_basis(&projected)?;
            if basis.cols() < expected {
                return Err(Error::RankDeficient {
                    column: skipped.first().copied().unwrap_or(0),
                });
            }
            Ok(basis)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = flat.into_iter();
    let sketched_bases = (0..sketches.len())
        .map(|_| iter.by_ref().take(n).collect())
        .collect();

    Ok(SketchedIndex {
        sketches,
        sketched_bases,
        n,
        ambient_dim,
        rank,
        params: IndexParams {
            seed: config.seed,
            alpha: config.alpha,
            n_back: config.n_back,
        },
        ambient: Some(collection.clone()),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    /// Candidates sorted by ascending distance, ties by id.
    pub ranked: Vec<DistanceRecord>,
    pub winner_id: usize,
    /// `sketched[t][i]`: sketched distance of subspace `i` in trial `t`.
    /// Empty for exhaustive queries.
    pub sketched: Vec<Vec<f64>>,
    /// Union of per-trial shortlists, ascending ids.
    pub candidates: Vec<usize>,
    /// `ξ₂/ξ₁` of the ranking; `+∞` when `ξ₁` is numerically zero or there is
    /// only one candidate.
    pub gap_eta: f64,
    /// True when the ranking uses ambient distances.
    pub verified: bool,
    /// Subspaces whose solve hit the iteration cap; they are ranked by the
    /// best iterate found.
    pub flagged: Vec<usize>,
}

impl QueryResult {
    pub fn winner(&self) -> &DistanceRecord {
        &self.ranked[0]
    }
}

pub(crate) fn by_distance_then_id(a: &DistanceRecord, b: &DistanceRecord) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.subspace_id.cmp(&b.subspace_id))
}

/// `ξ₁` at or below this fraction of `ξ_k` is treated as an exact zero.
const ZERO_DISTANCE_RATIO: f64 = 1e-12;

fn ratio_gap(first: f64, other: f64) -> f64 {
    if other == first {
        1.0
    } else if first <= ZERO_DISTANCE_RATIO * other {
        f64::INFINITY
    } else {
        other / first
    }
}

fn assemble(
    mut ranked: Vec<DistanceRecord>,
    sketched: Vec<Vec<f64>>,
    candidates: Vec<usize>,
    verified: bool,
    flagged: Vec<usize>,
) -> QueryResult {
    ranked.sort_by(by_distance_then_id);
    let gap_eta = match ranked.as_slice() {
        [a, b, ..] => ratio_gap(a.distance, b.distance),
        _ => f64::INFINITY,
    };
    QueryResult {
        winner_id: ranked[0].subspace_id,
        ranked,
        sketched,
        candidates,
        gap_eta,
        verified,
        flagged,
    }
}

/// Ambient-dimension ranking of every subspace: the exact baseline.
pub fn query_exhaustive(
    collection: &SubspaceCollection,
    q: &QueryVector,
    opts: &SolverOptions,
) -> Result<QueryResult> {
    if q.len() != collection.ambient_dim() {
        return Err(Error::DimensionMismatch {
            op: "query_exhaustive",
            left: (collection.ambient_dim(), collection.rank()),
            right: (q.len(), 1),
        });
    }
    let solved = collection
        .models()
        .par_iter()
        .map(|s| solve_record(q.values(), s.basis(), s.id(), opts))
        .collect::<Result<Vec<_>>>()?;
    let flagged = solved.iter().filter(|(_, ok)| !ok).map(|(r, _)| r.subspace_id).collect();
    let ranked = solved.into_iter().map(|(r, _)| r).collect();
    Ok(assemble(
        ranked,
        Vec::new(),
        (0..collection.len()).collect(),
        true,
        flagged,
    ))
}

fn solve_record(
    q: &[f64],
    basis: &DenseMatrix,
    id: usize,
    opts: &SolverOptions,
) -> Result<(DistanceRecord, bool)> {
    let sol = solve_l1(q, basis, opts)?;
    Ok((
        DistanceRecord {
            subspace_id: id,
            distance: sol.objective,
            coeffs: sol.coeffs,
        },
        sol.status == SolveStatus::Converged,
    ))
}

/// Sketched distance when the sketched basis may fill all of `R^d`.
fn sketched_record(pq: &[f64], basis: &DenseMatrix, id: usize, opts: &SolverOptions) -> Result<(DistanceRecord, bool)> {
    if basis.cols() >= basis.rows() {
        return Ok((
            DistanceRecord {
                subspace_id: id,
                distance: 0.0,
                coeffs: basis.transpose_matvec(pq)?,
            },
            true,
        ));
    }
    solve_record(pq, basis, id, opts)
}

/// Per-trial sketched distances of one query to every subspace.
pub(crate) struct SketchedDistances {
    pub per_trial: Vec<Vec<DistanceRecord>>,
    pub flagged: BTreeSet<usize>,
}

pub(crate) fn sketched_distances(
    index: &SketchedIndex,
    q: &QueryVector,
    opts: &SolverOptions,
) -> Result<SketchedDistances> {
    let mut flagged = BTreeSet::new();
    let mut per_trial = Vec::with_capacity(index.trials());
    for (sketch, bases) in index.sketches().iter().zip(index.sketched_bases()) {
        let pq = sketch.apply(q.values())?;
        let solved = bases
            .par_iter()
            .enumerate()
            .map(|(i, b)| sketched_record(&pq, b, i, opts))
            .collect::<Result<Vec<_>>>()?;
        for (rec, ok) in &solved {
            if !ok {
                flagged.insert(rec.subspace_id);
            }
        }
        per_trial.push(solved.into_iter().map(|(r, _)| r).collect::<Vec<_>>());
    }
    Ok(SketchedDistances { per_trial, flagged })
}

/// Union of the `n_back` closest ids of every trial, ascending.
pub(crate) fn shortlist(per_trial: &[Vec<DistanceRecord>], n_back: usize) -> Vec<usize> {
    let mut candidates = BTreeSet::new();
    for trial in per_trial {
        let mut order: Vec<&DistanceRecord> = trial.iter().collect();
        order.sort_by(|a, b| by_distance_then_id(a, b));
        candidates.extend(order.iter().take(n_back).map(|r| r.subspace_id));
    }
    candidates.into_iter().collect()
}

/// For each candidate, its record from the trial with the smallest sketched
/// distance (earliest trial on ties).
pub(crate) fn min_over_trials(
    per_trial: &[Vec<DistanceRecord>],
    candidates: &[usize],
) -> Vec<DistanceRecord> {
    candidates
        .iter()
        .map(|&i| {
            per_trial
                .iter()
                .map(|t| &t[i])
                .min_by(|a, b| a.distance.total_cmp(&b.distance))
                .expect("at least one trial")
                .clone()
        })
        .collect()
}

/// Answers a query through the sketched index. See the module docs for the
/// candidate and ranking rules.
pub fn query_sketched(
    index: &SketchedIndex,
    q: &QueryVector,
    config: &SearchConfig,
) -> Result<QueryResult> {
    if q.len() != index.ambient_dim() {
        return Err(Error::DimensionMismatch {
            op: "query_sketched",
            left: (index.dim(), index.ambient_dim()),
            right: (q.len(), 1),
        });
    }
    config.validate_query(index.len())?;
    config.sketch_solver.validate()?;
    config.ambient_solver.validate()?;
    let ambient = match (config.verify, index.ambient()) {
        (true, None) => {
            return Err(Error::invalid(
                "verification requested but the index carries no ambient bases",
            ))
        }
        (true, Some(c)) => Some(c),
        (false, _) => None,
    };

    let SketchedDistances {
        per_trial,
        mut flagged,
    } = sketched_distances(index, q, &config.sketch_solver)?;
    let sketched: Vec<Vec<f64>> = per_trial
        .iter()
        .map(|t| t.iter().map(|r| r.distance).collect())
        .collect();
    let candidates = shortlist(&per_trial, config.n_back);

    let ranked = match ambient {
        Some(collection) => {
            let solved = candidates
                .par_iter()
                .map(|&i| {
                    let s = &collection.models()[i];
                    solve_record(q.values(), s.basis(), i, &config.ambient_solver)
                })
                .collect::<Result<Vec<_>>>()?;
            for (rec, ok) in &solved {
                if !ok {
                    flagged.insert(rec.subspace_id);
                }
            }
            solved.into_iter().map(|(r, _)| r).collect()
        }
        None => min_over_trials(&per_trial, &candidates),
    };
    Ok(assemble(
        ranked,
        sketched,
        candidates,
        config.verify,
        flagged.into_iter().collect(),
    ))
}

/// `ξ_{k'}/ξ_1` of a ranking. Returns `+∞` when `ξ_1` is zero (to within a
/// relative `1e-12` of `ξ_{k'}`) and 1 when both are equal.
pub fn gap_statistic(result: &QueryResult, k_prime: usize) -> Result<f64> {
    if k_prime == 0 || result.ranked.len() < k_prime {
        return Err(Error::invalid(format!(
            "gap statistic needs 1 <= k' <= {} ranked entries, got k'={k_prime}",
            result.ranked.len()
        )));
    }
    Ok(ratio_gap(
        result.ranked[0].distance,
        result.ranked[k_prime - 1].distance,
    ))
}

/// Convenience wrapper around [`distance_to_subspace`] over a collection.
pub fn ambient_distances(
    collection: &SubspaceCollection,
    q: &QueryVector,
    opts: &SolverOptions,
) -> Result<Vec<DistanceRecord>> {
    collection
        .models()
        .par_iter()
        .map(|s| distance_to_subspace(q, s, opts))
        .collect()
}
