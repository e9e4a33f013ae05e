//! Seeded standard Cauchy variates and Cauchy sketch matrices.
//!
//! Variates are produced by inverse-CDF sampling, one uniform per entry, from
//! a ChaCha8 stream selected by `(seed, stream_id)`. Every trial of a search
//! gets its own stream, so trials are independent and each can be regenerated
//! on its own.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{matvec, norm1, DenseMatrix};

/// Identifies one reproducible random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngSpec {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Uniform on the open interval (0, 1): the midpoint of one of 2^52 equal
/// cells. Every midpoint is exactly representable, so neither endpoint can
/// occur.
#[inline]
pub fn open_uniform<R: RngCore>(rng: &mut R) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 52) as f64;
    ((rng.next_u64() >> 12) as f64 + 0.5) * SCALE
}

/// `tan(π t)` for `t ∈ (-1/2, 1/2)`, exact at `0` and `±1/4`. Near the poles
/// the cotangent identity keeps the argument small so `1/2 - |t|` is formed
/// without cancellation.
fn tan_pi(t: f64) -> f64 {
    let a = t.abs();
    let mag = if a == 0.0 {
        0.0
    } else if a == 0.25 {
        1.0
    } else if a < 0.25 {
        (std::f64::consts::PI * a).tan()
    } else {
        1.0 / (std::f64::consts::PI * (0.5 - a)).tan()
    };
    mag.copysign(t)
}

/// Inverse CDF of the standard Cauchy distribution, `tan(π(u − 1/2))`.
pub fn cauchy_quantile(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(u));
    }
    Ok(tan_pi(u - 0.5))
}

/// Draws one standard Cauchy variate.
#[inline]
pub fn sample_cauchy<R: RngCore>(rng: &mut R) -> f64 {
    tan_pi(open_uniform(rng) - 0.5)
}

/// A `rows × cols` matrix of i.i.d. standard Cauchy entries filled in
/// row-major order from the given stream. No shape restrictions beyond
/// non-empty; `sample_sketch` adds the dimension-reduction check.
pub fn cauchy_matrix(rng: RngSpec, rows: usize, cols: usize) -> Result<DenseMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("Cauchy matrix needs at least one row and column"));
    }
    let mut stream = rng.rng();
    let entries = (0..rows * cols).map(|_| sample_cauchy(&mut stream)).collect();
    DenseMatrix::from_row_major(rows, cols, entries)
}

/// The `d × D` random embedding used by one search trial.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchMatrix {
    p: DenseMatrix,
    rng: RngSpec,
}

impl SketchMatrix {
    /// Reassembles a sketch from stored parts (used when loading an index).
    pub fn from_parts(p: DenseMatrix, rng: RngSpec) -> Result<Self> {
        if p.rows() == 0 || p.rows() > p.cols() {
            return Err(Error::invalid(format!(
                "sketch shape {:?} must satisfy 1 <= d <= D",
                p.shape()
            )));
        }
        Ok(Self { p, rng })
    }

    /// The `D × D` identity "sketch". Test hook: with it, sketched distances
    /// coincide with ambient distances.
    pub fn identity(ambient_dim: usize, rng: RngSpec) -> Self {
        Self {
            p: DenseMatrix::identity(ambient_dim),
            rng,
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.p
    }

    pub fn rng(&self) -> RngSpec {
        self.rng
    }

    /// Embedding dimension `d`.
    pub fn dim(&self) -> usize {
        self.p.rows()
    }

    pub fn ambient_dim(&self) -> usize {
        self.p.cols()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        matvec(&self.p, x)
    }
}

/// Samples the `d × D` Cauchy sketch for one trial. Requires `1 ≤ d < D`.
pub fn sample_sketch(rng: RngSpec, d: usize, ambient_dim: usize) -> Result<SketchMatrix> {
    if d == 0 {
        return Err(Error::invalid("sketch dimension d must be at least 1"));
    }
    if d >= ambient_dim {
        return Err(Error::invalid(format!(
            "sketch dimension d={d} must be below the ambient dimension D={ambient_dim}"
        )));
    }
    Ok(SketchMatrix {
        p: cauchy_matrix(rng, d, ambient_dim)?,
        rng,
    })
}

/// Median of a slice (mean of the two middle order statistics for even
/// lengths). The slice is reordered.
pub(crate) fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    assert!(n > 0, "median of an empty sample");
    let mid = n / 2;
    let (lo, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let lower = lo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Empirical 1-stability check: the median over rows `j` of
/// `|(P x)_j| / ‖x‖₁` for a fresh `d × len(x)` Cauchy matrix `P`. Each
/// `(P x)_j` is `‖x‖₁` times a standard Cauchy, so the result concentrates
/// near the median of `|Cauchy|`, which is 1.
pub fn stability_check(x: &[f64], d: usize, rng: RngSpec) -> Result<f64> {
    if d < 1000 {
        return Err(Error::invalid(format!(
            "stability check needs d >= 1000 for a meaningful median, got {d}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("stability_check input"));
    }
    let l1 = norm1(x);
    if l1 == 0.0 {
        return Err(Error::ZeroVector);
    }
    let direction = canonical_direction(x, l1);
    let p = cauchy_matrix(rng, d, x.len())?;
    let mut ratios: Vec<f64> = matvec(&p, &direction)?.into_iter().map(f64::abs).collect();
    Ok(median_in_place(&mut ratios))
}

/// `x / ‖x‖₁` rounded to 32 significant bits, so positive rescalings of `x`
/// map to the same direction vector despite last-bit rounding noise.
fn canonical_direction(x: &[f64], l1: f64) -> Vec<f64> {
    const DROP: u32 = 52 - 32;
    x.iter()
        .map(|&v| {
            let u = v / l1;
            if u == 0.0 {
                return 0.0;
            }
            let bits = u.to_bits();
            let half = 1u64 << (DROP - 1);
            f64::from_bits((bits + half) & !((1u64 << DROP) - 1))
        })
        .collect()
}
