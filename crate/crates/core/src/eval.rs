//! Experiment harness: synthetic instances with a controlled distance gap,
//! recognition-rate sweeps over the sketch dimension and shortlist size, the
//! distortion ratio ψ, and a loader for datasets stored on disk.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::cauchy::{sample_sketch, RngSpec, SketchMatrix};
use crate::error::{Error, Result};
use crate::io::{load_matrix, matrix_to_csv, write_atomic, write_matrix_binary};
use crate::l1_solver::{distance_to_subspace, solve_l1, SolverOptions};
use crate::matrix::{column_space_basis, matvec, norm1, orthonormalize, DenseMatrix};
use crate::search::{
    build_index, build_index_with_sketches, by_distance_then_id, min_over_trials,
    query_exhaustive, sketched_distances, shortlist, SearchConfig, SketchedIndex,
};
use crate::subspace::{fit_subspace, QueryVector, SubspaceCollection, SubspaceModel};

/// Maximum number of gap measurements spent on one query before giving up.
pub const MAX_GENERATION_ATTEMPTS: usize = 1000;
/// Scale updates tried on one draw of (point, corruption) before redrawing.
const STEPS_PER_DRAW: usize = 25;
/// Stream offset separating query streams from the subspace stream.
const QUERY_STREAM_BASE: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub ambient_dim: usize,
    pub rank: usize,
    /// Lower end of the commanded gap band.
    pub target_eta: f64,
    /// Upper end of the band; `2 · target_eta` when unset.
    pub eta_max: Option<f64>,
    pub queries: usize,
    /// Fraction of coordinates hit by sparse corruption.
    pub corruption_fraction: f64,
    pub corruption_magnitude: f64,
    /// Standard deviation of dense Gaussian noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n: usize, ambient_dim: usize, rank: usize, target_eta: f64) -> Self {
        Self {
            n,
            ambient_dim,
            rank,
            target_eta,
            eta_max: None,
            queries: 100,
            corruption_fraction: 0.1,
            corruption_magnitude: 1.0,
            noise_sigma: 0.05,
            seed: 0,
        }
    }

    pub fn eta_band(&self) -> (f64, f64) {
        (self.target_eta, self.eta_max.unwrap_or(2.0 * self.target_eta))
    }

    fn noiseless(&self) -> bool {
        (self.corruption_fraction == 0.0 || self.corruption_magnitude == 0.0)
            && self.noise_sigma == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.eta_band();
        if !(lo > 1.0) || !(hi >= lo) || !hi.is_finite() {
            return Err(Error::invalid(format!(
                "gap band must satisfy 1 < eta <= eta_max < inf, got [{lo}, {hi}]"
            )));
        }
        if !(0.0..1.0).contains(&self.corruption_fraction) {
            return Err(Error::invalid("corruption fraction must lie in [0, 1)"));
        }
        if !(self.corruption_magnitude >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise scales must be nonnegative"));
        }
        if self.n < 2 || self.rank == 0 || self.ambient_dim <= 2 * self.rank {
            return Err(Error::invalid(format!(
                "need n >= 2, r >= 1 and D > 2r; got n={}, r={}, D={}",
                self.n, self.rank, self.ambient_dim
            )));
        }
        Ok(())
    }
}

/// Parses `key=value` pairs separated by commas, e.g.
/// `n=38,r=9,D=2000,eta=3`. Keys: `n`, `r`, `D`, `eta`, `eta_max`,
/// `queries`, `frac`, `mag`, `sigma`, `seed`.
impl FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = SyntheticSpec::new(0, 0, 0, 0.0);
        let mut seen = [false; 4];
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value, got {part:?}")))?;
            let bad = || Error::invalid(format!("bad value for {key}: {value:?}"));
            let int = || value.trim().parse::<usize>().map_err(|_| bad());
            let real = || value.trim().parse::<f64>().map_err(|_| bad());
            match key.trim() {
                "n" => (spec.n, seen[0]) = (int()?, true),
                "r" => (spec.rank, seen[1]) = (int()?, true),
                "D" => (spec.ambient_dim, seen[2]) = (int()?, true),
                "eta" => (spec.target_eta, seen[3]) = (real()?, true),
                "eta_max" => spec.eta_max = Some(real()?),
                "queries" => spec.queries = int()?,
                "frac" => spec.corruption_fraction = real()?,
                "mag" => spec.corruption_magnitude = real()?,
                "sigma" => spec.noise_sigma = real()?,
                "seed" => spec.seed = value.trim().parse().map_err(|_| bad())?,
                other => return Err(Error::invalid(format!("unknown generator key {other:?}"))),
            }
        }
        if seen.contains(&false) {
            return Err(Error::invalid("generator spec needs n, r, D and eta"));
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticInstance {
    pub collection: SubspaceCollection,
    /// Labeled queries; the label is the subspace the clean point came from.
    pub queries: Vec<QueryVector>,
    /// Exhaustive gap `ξ₂/ξ₁` measured for each emitted query.
    pub measured_eta: Vec<f64>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<DenseMatrix> {
    let e = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DenseMatrix::from_row_major(rows, cols, e)
}

/// Draws `n` random subspaces (orthonormalized Gaussian bases) and the
/// labeled queries. Query `k` belongs to subspace `k mod n`: a random point
/// of that subspace plus `s · e`, where `e` follows the noise model and the
/// scale `s` is adjusted until the exhaustive gap lands in the commanded
/// band. A noiseless spec yields queries lying exactly in their subspaces
/// (gap `+∞`), and the band is not enforced.
pub fn generate_instance(spec: &SyntheticSpec) -> Result<SyntheticInstance> {
    spec.validate()?;
    let mut rng = RngSpec::new(spec.seed, 0).rng();
    let models = (0..spec.n)
        .map(|i| {
            let b = orthonormalize(&gaussian_matrix(&mut rng, spec.ambient_dim, spec.rank)?)?;
            SubspaceModel::new(i, b)
        })
        .collect::<Result<Vec<_>>>()?;
    let collection = SubspaceCollection::new(models)?;

    let generated = (0..spec.queries)
        .into_par_iter()
        .map(|k| generate_query(spec, &collection, k))
        .collect::<Result<Vec<_>>>()?;
    let (queries, measured_eta) = generated.into_iter().unzip();
    Ok(SyntheticInstance {
        collection,
        queries,
        measured_eta,
    })
}

fn generate_query(
    spec: &SyntheticSpec,
    collection: &SubspaceCollection,
    k: usize,
) -> Result<(QueryVector, f64)> {
    let label = k % spec.n;
    let basis = collection.models()[label].basis();
    let opts = SolverOptions::default();
    let mut rng = RngSpec::new(spec.seed, QUERY_STREAM_BASE + k as u64).rng();
    let (lo, hi) = spec.eta_band();
    let goal = (lo * hi).sqrt();

    let mut attempts = 0;
    while attempts < MAX_GENERATION_ATTEMPTS {
        let coeffs: Vec<f64> = (0..spec.rank).map(|_| rng.sample(StandardNormal)).collect();
        let clean = matvec(basis, &coeffs)?;
        if spec.noiseless() {
            return Ok((QueryVector::new(clean, Some(label))?, f64::INFINITY));
        }
        let noise = draw_noise(spec, &mut rng);
        let along = solve_l1(&noise, basis, &opts)?.objective;
        if along <= 1e-9 * norm1(&noise) {
            continue;
        }

        // Gap as a function of the noise scale s. The distance to the own
        // subspace is exactly s·along; the competitors move slowly with s.
        let mut scale = norm1(&clean) / (along * goal);
        let mut prev: Option<(f64, f64)> = None;
        for _ in 0..STEPS_PER_DRAW {
            attempts += 1;
            let values: Vec<f64> = clean.iter().zip(&noise).map(|(c, e)| c + scale * e).collect();
            let q = QueryVector::new(values, Some(label))?;
            let res = query_exhaustive(collection, &q, &opts)?;
            let own = res
                .ranked
                .iter()
                .find(|r| r.subspace_id == label)
                .expect("every subspace is ranked")
                .distance;
            let rival = res
                .ranked
                .iter()
                .filter(|r| r.subspace_id != label)
                .map(|r| r.distance)
                .fold(f64::INFINITY, f64::min);
            if res.winner_id == label && (lo..=hi).contains(&res.gap_eta) {
                return Ok((q, res.gap_eta));
            }
            let eta = rival / own;
            if !(eta.is_finite() && eta > 0.0) || attempts >= MAX_GENERATION_ATTEMPTS {
                break;
            }
            // Secant step on log(eta) against log(s); plain fixed-point
            // step when the secant is unavailable or unreasonable.
            let (ls, le) = (scale.ln(), (eta / goal).ln());
            let fixed = scale * eta / goal;
            let next = match prev {
                Some((ps, pe)) if (le - pe).abs() > 1e-12 => {
                    let cand = (ls - le * (ls - ps) / (le - pe)).exp();
                    if cand.is_finite() && cand > fixed / 10.0 && cand < fixed * 10.0 {
                        cand
                    } else {
                        fixed
                    }
                }
                _ => fixed,
            };
            prev = Some((ls, le));
            scale = next;
        }
    }
    Err(Error::GenerationFailed {
        attempts: MAX_GENERATION_ATTEMPTS,
        hint: format!(
            "query {k} never reached a gap in [{lo}, {hi}]; widen the band or change the noise model"
        ),
    })
}

fn draw_noise(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = spec.ambient_dim;
    let mut e: Vec<f64> = if spec.noise_sigma > 0.0 {
        (0..dim)
            .map(|_| spec.noise_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    } else {
        vec![0.0; dim]
    };
    if spec.corruption_fraction > 0.0 && spec.corruption_magnitude > 0.0 {
        let count = ((spec.corruption_fraction * dim as f64).round() as usize).clamp(1, dim);
        for i in sample_indices(rng, dim, count) {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            e[i] += sign * spec.corruption_magnitude;
        }
    }
    e
}

/// A labeled query set with its exhaustive ambient baseline.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub collection: SubspaceCollection,
    pub queries: Vec<QueryVector>,
    /// Exhaustive winner per query.
    pub winners: Vec<usize>,
    /// Exhaustive gap per query.
    pub etas: Vec<f64>,
    /// Exhaustive ambient distances per query, indexed by subspace id.
    pub distances: Vec<Vec<f64>>,
}

impl EvalSet {
    pub fn new(
        collection: SubspaceCollection,
        queries: Vec<QueryVector>,
        opts: &SolverOptions,
    ) -> Result<Self> {
        let results = queries
            .par_iter()
            .map(|q| query_exhaustive(&collection, q, opts))
            .collect::<Result<Vec<_>>>()?;
        let winners = results.iter().map(|r| r.winner_id).collect();
        let etas = results.iter().map(|r| r.gap_eta).collect();
        let distances = results
            .iter()
            .map(|r| {
                let mut d = vec![0.0; collection.len()];
                for rec in &r.ranked {
                    d[rec.subspace_id] = rec.distance;
                }
                d
            })
            .collect();
        Ok(Self {
            collection,
            queries,
            winners,
            etas,
            distances,
        })
    }

    pub fn from_instance(instance: SyntheticInstance, opts: &SolverOptions) -> Result<Self> {
        Self::new(instance.collection, instance.queries, opts)
    }

    /// Mean of the finite exhaustive gaps (`+∞` if none is finite).
    pub fn mean_eta(&self) -> f64 {
        let finite: Vec<f64> = self.etas.iter().copied().filter(|e| e.is_finite()).collect();
        if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub d: usize,
    pub trials: usize,
    pub n_back: usize,
    /// Fraction of queries whose returned winner equals the exhaustive one.
    pub success_rate: f64,
    /// Fraction of queries whose exhaustive winner made the shortlist.
    pub recall: f64,
    pub mean_eta: f64,
    /// Wall-clock milliseconds; zero unless timing was requested.
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_CSV_HEADER: &str = "d,trials,n_back,success_rate,recall,mean_eta,wall_ms";

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.d, r.trials, r.n_back, r.success_rate, r.recall, r.mean_eta, r.wall_ms
            );
        }
        out
    }

    pub fn row(&self, d: usize, n_back: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.d == d && r.n_back == n_back)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepOptions {
    /// Fill `wall_ms`. Off by default so sweep output is byte-reproducible.
    pub record_time: bool,
}

/// Seed of the index built for sketch dimension `d`.
pub fn derive_seed(base: u64, d: usize) -> u64 {
    let mut z = base ^ (d as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Index for one sweep cell. `d = D` selects the identity sketch.
fn sweep_index(set: &EvalSet, d: usize, config: &SearchConfig) -> Result<SketchedIndex> {
    let ambient = set.collection.ambient_dim();
    if d == ambient {
        let sketches = (0..config.trials)
            .map(|t| SketchMatrix::identity(ambient, RngSpec::new(config.seed, t as u64)))
            .collect();
        build_index_with_sketches(&set.collection, sketches, config)
    } else {
        build_index(&set.collection, config)
    }
}

fn check_d_values(d_values: &[usize], ambient: usize) -> Result<()> {
    if d_values.is_empty() {
        return Err(Error::invalid("no sketch dimensions given"));
    }
    if d_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("sketch dimensions must be strictly ascending"));
    }
    if d_values[0] == 0 || *d_values.last().unwrap() > ambient {
        return Err(Error::invalid(format!(
            "sketch dimensions must lie in 1..={ambient}"
        )));
    }
    Ok(())
}

/// Recognition rate against sketch dimension. Every `d` gets a fresh index
/// seeded by [`derive_seed`]`(template.seed, d)`; `d = D` uses the identity
/// sketch.
pub fn sweep_dimension(
    set: &EvalSet,
    d_values: &[usize],
    template: &SearchConfig,
    options: SweepOptions,
) -> Result<SweepResult> {
    sweep_grid(set, d_values, &[template.n_back], template, options)
}

/// Recognition rate and recall over a `(d, n_back)` grid. One index per `d`
/// is shared by every `n_back`, so shortlists are nested in `n_back`.
pub fn sweep_nback(
    set: &EvalSet,
    d_values: &[usize],
    nback_values: &[usize],
    template: &SearchConfig,
    options: SweepOptions,
) -> Result<SweepResult> {
    sweep_grid(set, d_values, nback_values, template, options)
}

fn sweep_grid(
    set: &EvalSet,
    d_values: &[usize],
    nback_values: &[usize],
    template: &SearchConfig,
    options: SweepOptions,
) -> Result<SweepResult> {
    check_d_values(d_values, set.collection.ambient_dim())?;
    let mut nbacks = nback_values.to_vec();
    nbacks.sort_unstable();
    nbacks.dedup();
    if nbacks.is_empty() || nbacks[0] == 0 || *nbacks.last().unwrap() > set.collection.len() {
        return Err(Error::invalid(format!(
            "n_back values must lie in 1..={}",
            set.collection.len()
        )));
    }
    if set.queries.is_empty() {
        return Err(Error::invalid("no queries to evaluate"));
    }
    let total = set.queries.len() as f64;
    let mut rows = Vec::with_capacity(d_values.len() * nbacks.len());
    for &d in d_values {
        let start = Instant::now();
        let mut config = template.clone();
        config.d = d;
        config.seed = derive_seed(template.seed, d);
        config.n_back = nbacks[0];
        let index = sweep_index(set, d, &config)?;

        // (success, recall) per query and n_back
        let outcomes = set
            .queries
            .par_iter()
            .enumerate()
            .map(|(k, q)| {
                let sketched = sketched_distances(&index, q, &config.sketch_solver)?;
                let truth = set.winners[k];
                Ok(nbacks
                    .iter()
                    .map(|&nb| {
                        let candidates = shortlist(&sketched.per_trial, nb);
                        let recalled = candidates.contains(&truth);
                        let winner = if config.verify {
                            // The baseline already holds these ambient
                            // distances, solved with the same options.
                            *candidates
                                .iter()
                                .min_by(|&&a, &&b| {
                                    set.distances[k][a]
                                        .total_cmp(&set.distances[k][b])
                                        .then(a.cmp(&b))
                                })
                                .expect("shortlist is never empty")
                        } else {
                            min_over_trials(&sketched.per_trial, &candidates)
                                .into_iter()
                                .min_by(by_distance_then_id)
                                .expect("shortlist is never empty")
                                .subspace_id
                        };
                        (winner == truth, recalled)
                    })
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let elapsed = start.elapsed().as_millis() as u64;

        for (j, &nb) in nbacks.iter().enumerate() {
            let success = outcomes.iter().filter(|o| o[j].0).count() as f64;
            let recall = outcomes.iter().filter(|o| o[j].1).count() as f64;
            rows.push(SweepRow {
                d,
                trials: config.trials,
                n_back: nb,
                success_rate: success / total,
                recall: recall / total,
                mean_eta: set.mean_eta(),
                wall_ms: if options.record_time { elapsed } else { 0 },
            });
        }
    }
    Ok(SweepResult { rows })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistortionSample {
    /// Sketched distance over ambient distance.
    pub psi: f64,
    pub d: usize,
    pub r: usize,
    pub seed: u64,
    /// Stream id of the sketch that produced this sample.
    pub matrix: u64,
}

/// Samples `ψ = d_ℓ1(P q, P S) / d_ℓ1(q, S)` over `num_matrices` independent
/// Cauchy sketches (streams `0..num_matrices` of `seed`).
pub fn distortion_histogram(
    q: &QueryVector,
    s: &SubspaceModel,
    d: usize,
    num_matrices: usize,
    seed: u64,
) -> Result<Vec<DistortionSample>> {
    let opts = SolverOptions::default();
    if d <= s.rank() {
        return Err(Error::invalid(format!(
            "sketch dimension d={d} must exceed the subspace rank r={}",
            s.rank()
        )));
    }
    let ambient = distance_to_subspace(q, s, &opts)?.distance;
    if !(ambient > 0.0) {
        return Err(Error::invalid(
            "query lies in the subspace; the distortion ratio is undefined",
        ));
    }
    (0..num_matrices as u64)
        .into_par_iter()
        .map(|k| {
            let sketch = sample_sketch(RngSpec::new(seed, k), d, s.ambient_dim())?;
            let (basis, skipped) = column_space_basis(&sketch.matrix().matmul(s.basis())?)?;
            if basis.cols() < s.rank() {
                return Err(Error::RankDeficient {
                    column: skipped[0],
                });
            }
            let sketched = solve_l1(&sketch.apply(q.values())?, &basis, &opts)?.objective;
            Ok(DistortionSample {
                psi: sketched / ambient,
                d,
                r: s.rank(),
                seed,
                matrix: k,
            })
        })
        .collect()
}

/// 1%, 50% and 99% quantiles of ψ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiSummary {
    pub q01: f64,
    pub median: f64,
    pub q99: f64,
}

impl PsiSummary {
    /// `q99 − median > median − q01`.
    pub fn upper_tail_heavier(&self) -> bool {
        self.q99 - self.median > self.median - self.q01
    }
}

/// Linear-interpolation quantile of sorted data (`p ∈ [0, 1]`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn psi_summary(samples: &[DistortionSample]) -> Result<PsiSummary> {
    if samples.is_empty() {
        return Err(Error::invalid("no distortion samples"));
    }
    let mut v: Vec<f64> = samples.iter().map(|s| s.psi).collect();
    v.sort_by(f64::total_cmp);
    Ok(PsiSummary {
        q01: quantile_sorted(&v, 0.01),
        median: quantile_sorted(&v, 0.5),
        q99: quantile_sorted(&v, 0.99),
    })
}

pub fn psi_csv(samples: &[DistortionSample]) -> String {
    let mut out = String::from("psi\n");
    for s in samples {
        let _ = writeln!(out, "{}", s.psi);
    }
    out
}

pub const MANIFEST_FILE: &str = "manifest.csv";

/// On-disk matrix encoding for dataset files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Binary,
}

/// Loads a dataset directory: `manifest.csv` lists `class_id,train_file,
/// test_file` per line, file paths relative to the directory. Each file holds
/// one sample per row. Class ids must be `0..n` in any order. One subspace of
/// rank `r` is fitted per class; test rows become labeled queries.
pub fn load_external_dataset(
    dir: &Path,
    r: usize,
) -> Result<(SubspaceCollection, Vec<QueryVector>)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(manifest_path.clone()),
        _ => Error::Io(e),
    })?;
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("class_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [id, train, test] = fields.as_slice() else {
            return Err(Error::format(
                "manifest",
                format!("line {}: expected class_id,train_file,test_file", lineno + 1),
            ));
        };
        let id = id.parse().map_err(|_| {
            Error::format("manifest", format!("line {}: bad class id {id:?}", lineno + 1))
        })?;
        entries.push((id, train.to_string(), test.to_string()));
    }
    entries.sort_by_key(|e| e.0);
    if entries.iter().enumerate().any(|(i, e)| e.0 != i) {
        return Err(Error::format("manifest", "class ids must be 0..n without gaps or repeats"));
    }

    let mut ambient: Option<usize> = None;
    let mut check_dim = |m: &DenseMatrix, file: &str| -> Result<()> {
        if m.rows() == 0 {
            return Ok(());
        }
        match ambient {
            None => ambient = Some(m.cols()),
            Some(a) if a != m.cols() => {
                return Err(Error::format(
                    "dataset",
                    format!("{file} has dimension {}, expected {a}", m.cols()),
                ))
            }
            _ => {}
        }
        Ok(())
    };
    let mut models = Vec::with_capacity(entries.len());
    let mut queries = Vec::new();
    for (id, train, test) in &entries {
        let samples = load_matrix(&dir.join(train))?;
        check_dim(&samples, train)?;
        let tests = load_matrix(&dir.join(test))?;
        check_dim(&tests, test)?;
        models.push(fit_subspace(&samples.transpose(), r)?.with_id(*id));
        for k in 0..tests.rows() {
            queries.push(QueryVector::new(tests.row(k).to_vec(), Some(*id))?);
        }
    }
    Ok((SubspaceCollection::new(models)?, queries))
}

/// Writes a synthetic instance in the dataset layout read by
/// [`load_external_dataset`]: `train_per_class` random points of each
/// subspace as training rows, the instance's queries as test rows.
pub fn write_dataset(
    dir: &Path,
    instance: &SyntheticInstance,
    train_per_class: usize,
    seed: u64,
    format: MatrixFormat,
) -> Result<()> {
    let r = instance.collection.rank();
    if train_per_class < r {
        return Err(Error::invalid(format!(
            "need at least r={r} training samples per class"
        )));
    }
    fs::create_dir_all(dir)?;
    let ext = match format {
        MatrixFormat::Csv => "csv",
        MatrixFormat::Binary => "bin",
    };
    let encode = |m: &DenseMatrix| -> Vec<u8> {
        match format {
            MatrixFormat::Csv => matrix_to_csv(m).into_bytes(),
            MatrixFormat::Binary => {
                let mut buf = Vec::new();
                write_matrix_binary(&mut buf, m).expect("Vec write");
                buf
            }
        }
    };
    let dim = instance.collection.ambient_dim();
    let mut manifest = String::new();
    for model in instance.collection.models() {
        let id = model.id();
        let mut rng = RngSpec::new(seed, id as u64).rng();
        let coeffs = gaussian_matrix(&mut rng, r, train_per_class)?;
        let train = model.basis().matmul(&coeffs)?.transpose();
        let test_rows: Vec<f64> = instance
            .queries
            .iter()
            .filter(|q| q.label() == Some(id))
            .flat_map(|q| q.values().iter().copied())
            .collect();
        let test = DenseMatrix::from_row_major(test_rows.len() / dim, dim, test_rows)?;
        let train_name = format!("class{id}_train.{ext}");
        let test_name = format!("class{id}_test.{ext}");
        write_atomic(&dir.join(&train_name), &encode(&train))?;
        write_atomic(&dir.join(&test_name), &encode(&test))?;
        let _ = writeln!(manifest, "{id},{train_name},{test_name}");
    }
    write_atomic(&dir.join(MANIFEST_FILE), manifest.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::norm2;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            queries: 12,
            ..SyntheticSpec::new(4, 60, 2, 3.0)
        }
    }

    #[test]
    fn spec_parsing() {
        let s: SyntheticSpec = "n=38,r=9,D=2000,eta=3".parse().unwrap();
        assert_eq!((s.n, s.rank, s.ambient_dim, s.target_eta), (38, 9, 2000, 3.0));
        assert_eq!(s.eta_band(), (3.0, 6.0));
        let s: SyntheticSpec = "n=5, r=2, D=30, eta=1.1, eta_max=1.3, queries=7, seed=4".parse().unwrap();
        assert_eq!((s.eta_band(), s.queries, s.seed), ((1.1, 1.3), 7, 4));
        assert!("n=5,r=2,D=30".parse::<SyntheticSpec>().is_err());
        assert!("n=5,r=2,D=30,eta=0.5".parse::<SyntheticSpec>().is_err());
        assert!("n=5,r=2,D=30,eta=2,bogus=1".parse::<SyntheticSpec>().is_err());
        assert!("n=5,r=2,D=4,eta=2".parse::<SyntheticSpec>().is_err());
        assert!("n=5,r=2,D=30,eta=2,frac=1".parse::<SyntheticSpec>().is_err());
    }

    #[test]
    fn noiseless_queries_lie_in_their_subspaces() {
        let spec = SyntheticSpec {
            corruption_fraction: 0.0,
            noise_sigma: 0.0,
            ..small_spec()
        };
        let inst = generate_instance(&spec).unwrap();
        let set = EvalSet::from_instance(inst.clone(), &SolverOptions::default()).unwrap();
        for (k, q) in inst.queries.iter().enumerate() {
            let label = q.label().unwrap();
            assert_eq!(label, k % spec.n);
            assert!(set.distances[k][label] <= 1e-9 * norm1(q.values()));
            assert_eq!(set.winners[k], label);
        }
    }

    #[test]
    fn single_corruption_bounds_distance() {
        // two orthogonal coordinate subspaces
        let cols = |offset: usize| -> DenseMatrix {
            let c: Vec<Vec<f64>> = (0..2)
                .map(|j| (0..8).map(|i| if i == offset + j { 1.0 } else { 0.0 }).collect())
                .collect();
            DenseMatrix::from_columns(8, &c).unwrap()
        };
        let s0 = SubspaceModel::new(0, cols(0)).unwrap();
        let mut q = vec![0.0; 8];
        q[0] = 2.0;
        q[1] = -1.0;
        let c = 3.5;
        q[6] += c;
        let d = distance_to_subspace(&QueryVector::new(q, None).unwrap(), &s0, &SolverOptions::default())
            .unwrap()
            .distance;
        assert!(d <= c + 1e-12);
    }

    #[test]
    fn generated_gaps_land_in_band() {
        let spec = small_spec();
        let inst = generate_instance(&spec).unwrap();
        let set = EvalSet::from_instance(inst.clone(), &SolverOptions::default()).unwrap();
        for (k, eta) in set.etas.iter().enumerate() {
            assert!((3.0..=6.0).contains(eta), "query {k}: eta {eta}");
            assert_eq!(*eta, inst.measured_eta[k]);
            assert_eq!(set.winners[k], inst.queries[k].label().unwrap());
        }
        // reproducible
        let again = generate_instance(&spec).unwrap();
        assert_eq!(again.queries, inst.queries);
    }

    #[test]
    fn weak_gap_band() {
        let spec = SyntheticSpec {
            eta_max: Some(1.3),
            queries: 6,
            ..SyntheticSpec::new(4, 60, 2, 1.1)
        };
        let inst = generate_instance(&spec).unwrap();
        assert!(inst.measured_eta.iter().all(|e| (1.1..=1.3).contains(e)));
    }

    #[test]
    fn identity_hook_is_exact() {
        let inst = generate_instance(&small_spec()).unwrap();
        let set = EvalSet::from_instance(inst, &SolverOptions::default()).unwrap();
        let res = sweep_dimension(&set, &[60], &SearchConfig::new(60), SweepOptions::default()).unwrap();
        assert_eq!(res.rows[0].success_rate, 1.0);
        assert_eq!(res.rows[0].recall, 1.0);
    }

    #[test]
    fn sweep_rows_and_csv() {
        let inst = generate_instance(&small_spec()).unwrap();
        let set = EvalSet::from_instance(inst, &SolverOptions::default()).unwrap();
        let tmpl = SearchConfig::new(1).with_seed(3);
        let a = sweep_dimension(&set, &[1, 10, 30], &tmpl, SweepOptions::default()).unwrap();
        let b = sweep_dimension(&set, &[1, 10, 30], &tmpl, SweepOptions::default()).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows.len(), 3);
        assert!(a.to_csv().starts_with("d,trials,n_back,success_rate,recall,mean_eta,wall_ms\n"));
        for row in &a.rows {
            assert!((0.0..=1.0).contains(&row.success_rate));
            assert_eq!(row.wall_ms, 0);
        }
        assert!(sweep_dimension(&set, &[10, 5], &tmpl, SweepOptions::default()).is_err());
        assert!(sweep_dimension(&set, &[61], &tmpl, SweepOptions::default()).is_err());
    }

    #[test]
    fn nback_grid_recall_is_monotone() {
        let inst = generate_instance(&small_spec()).unwrap();
        let set = EvalSet::from_instance(inst, &SolverOptions::default()).unwrap();
        for verify in [false, true] {
            let tmpl = SearchConfig::new(1).with_seed(9).with_trials(2).with_verify(verify);
            let res = sweep_nback(&set, &[3, 8], &[1, 2, 3, 4], &tmpl, SweepOptions::default()).unwrap();
            for &d in &[3, 8] {
                let recalls: Vec<f64> = (1..=4).map(|nb| res.row(d, nb).unwrap().recall).collect();
                assert!(recalls.windows(2).all(|w| w[0] <= w[1]), "{recalls:?}");
                assert_eq!(recalls[3], 1.0);
                if verify {
                    assert_eq!(res.row(d, 4).unwrap().success_rate, 1.0);
                }
            }
        }
    }

    #[test]
    fn distortion_samples() {
        let inst = generate_instance(&small_spec()).unwrap();
        let q = &inst.queries[0];
        let s = &inst.collection.models()[1];
        let samples = distortion_histogram(q, s, 20, 200, 5).unwrap();
        assert_eq!(samples.len(), 200);
        assert!(samples.iter().all(|x| x.psi > 0.0 && x.psi.is_finite()));
        let summary = psi_summary(&samples).unwrap();
        assert!(summary.q01 <= summary.median && summary.median <= summary.q99);
        assert!(psi_csv(&samples).starts_with("psi\n"));
        assert!(distortion_histogram(q, s, 2, 10, 5).is_err());
        let inside = QueryVector::new(s.basis().column(0), None).unwrap();
        assert!(distortion_histogram(&inside, s, 20, 10, 5).is_err());
    }

    #[test]
    fn quantile_interpolation() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.0);
        assert_eq!(quantile_sorted(&v, 0.0), 0.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.01) - 0.04).abs() < 1e-12);
    }

    #[test]
    fn dataset_round_trip_preserves_spans() {
        let inst = generate_instance(&small_spec()).unwrap();
        for format in [MatrixFormat::Csv, MatrixFormat::Binary] {
            let dir = tempfile::tempdir().unwrap();
            write_dataset(dir.path(), &inst, 5, 1, format).unwrap();
            let (coll, queries) = load_external_dataset(dir.path(), 2).unwrap();
            assert_eq!(coll.len(), 4);
            assert_eq!(queries.len(), inst.queries.len());
            for (orig, loaded) in inst.collection.models().iter().zip(coll.models()) {
                for col in orig.basis().columns() {
                    let c = loaded.basis().transpose_matvec(&col).unwrap();
                    let p = matvec(loaded.basis(), &c).unwrap();
                    let res: Vec<f64> = col.iter().zip(&p).map(|(a, b)| a - b).collect();
                    assert!(norm2(&res) <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_external_dataset(dir.path(), 2),
            Err(Error::MissingFile(_))
        ));
        fs::write(dir.path().join(MANIFEST_FILE), "0,a.csv,b.csv\n1,missing.csv,b.csv\n").unwrap();
        fs::write(dir.path().join("a.csv"), "1,0,0,0\n0,1,0,0\n").unwrap();
        fs::write(dir.path().join("b.csv"), "").unwrap();
        match load_external_dataset(dir.path(), 1) {
            Err(Error::MissingFile(p)) => assert!(p.ends_with("missing.csv")),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(dir.path().join(MANIFEST_FILE), "0,a.csv\n").unwrap();
        assert!(matches!(
            load_external_dataset(dir.path(), 1),
            Err(Error::Format { .. })
        ));
        fs::write(dir.path().join(MANIFEST_FILE), "0,a.csv,b.csv\n2,a.csv,b.csv\n").unwrap();
        assert!(load_external_dataset(dir.path(), 1).is_err());
        fs::write(dir.path().join("c.csv"), "1,0,0\n0,1,0\n").unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "0,a.csv,b.csv\n1,c.csv,b.csv\n").unwrap();
        assert!(matches!(
            load_external_dataset(dir.path(), 1),
            Err(Error::Format { .. })
        ));
    }
}
