//! Least-absolute-deviations regression, `min_v ‖q − B v‖₁`.
//!
//! The solver runs a Mehrotra predictor-corrector interior-point method on the
//! epigraph linear program
//!
//! ```text
//! minimize   1ᵀu + 1ᵀw
//! subject to B v + u − w = q,   u, w ≥ 0,   v free
//! ```
//!
//! whose dual is `maximize qᵀy subject to Bᵀy = 0, −1 ≤ y ≤ 1`. Eliminating
//! the slack blocks leaves an `r × r` positive definite system per step, so
//! the cost per iteration is `O(m r²)`. The dual iterate certifies the
//! duality gap used as the stopping rule. After convergence the iterate is
//! snapped to a vertex (`r` zero residuals) when that does not increase the
//! objective.

use crate::error::{Error, Result};
use crate::matrix::{column_space_basis, dot, lu_solve, norm1, DenseMatrix};
use crate::subspace::{DistanceRecord, QueryVector, SubspaceModel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Stopping threshold on the relative duality gap.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Relative size of the deterministic perturbation applied to `q`.
    pub perturbation: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 200,
            perturbation: 1e-12,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(Error::invalid("solver tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !(self.perturbation >= 0.0) || !self.perturbation.is_finite() {
            return Err(Error::invalid("perturbation scale must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// The iteration cap was hit; the solution holds the best iterate seen.
    MaxIters,
}

#[derive(Clone, Debug, PartialEq)]
pub struct L1Solution {
    pub coeffs: Vec<f64>,
    /// `‖q − B·coeffs‖₁`, recomputed from the returned coefficients.
    pub objective: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// Row count above which the least-squares start is refined by a few
/// reweighted least-squares passes.
const IRLS_MIN_ROWS: usize = 64;
const IRLS_PASSES: usize = 4;
const STEP_FRACTION: f64 = 0.99995;
const DUAL_FEASIBILITY: f64 = 1e-10;

/// `‖q − B v‖₁`.
pub fn l1_residual(q: &[f64], b: &DenseMatrix, v: &[f64]) -> f64 {
    (0..b.rows()).map(|i| (q[i] - dot(b.row(i), v)).abs()).sum()
}

fn residual(q: &[f64], b: &DenseMatrix, v: &[f64]) -> Vec<f64> {
    (0..b.rows()).map(|i| q[i] - dot(b.row(i), v)).collect()
}

/// Solves `min_v ‖q − B v‖₁` for an `m × r` matrix `B` of full column rank
/// with `m > r`.
///
/// Only the objective is unique; in degenerate problems several coefficient
/// vectors attain it and any one of them may be returned.
pub fn solve_l1(q: &[f64], b: &DenseMatrix, opts: &SolverOptions) -> Result<L1Solution> {
    opts.validate()?;
    let (m, r) = b.shape();
    if q.len() != m {
        return Err(Error::DimensionMismatch {
            op: "solve_l1",
            left: b.shape(),
            right: (q.len(), 1),
        });
    }
    if r == 0 || m <= r {
        return Err(Error::invalid(format!(
            "least absolute deviations needs m > r >= 1, got m={m}, r={r}"
        )));
    }
    if q.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("solve_l1 right-hand side"));
    }
    let (_, skipped) = column_space_basis(b)?;
    if let Some(&column) = skipped.first() {
        return Err(Error::RankDeficient { column });
    }

    let scale = norm1(q) / m as f64;
    if scale == 0.0 {
        return Ok(L1Solution {
            coeffs: vec![0.0; r],
            objective: 0.0,
            iterations: 0,
            status: SolveStatus::Converged,
        });
    }
    // Work on q / scale (mean |q_i| = 1), perturbed lexicographically.
    let qs: Vec<f64> = q
        .iter()
        .enumerate()
        .map(|(i, &x)| x / scale + opts.perturbation * (i + 1) as f64 / m as f64)
        .collect();

    let ipm = InteriorPoint::new(&qs, b, opts).run();
    let mut coeffs: Vec<f64> = ipm.coeffs.iter().map(|c| c * scale).collect();
    let mut objective = l1_residual(q, b, &coeffs);
    // The vertex is chosen on the perturbed problem but interpolates the
    // original q, which removes the perturbation from the reported result.
    if let Some(rows) = vertex_rows(&qs, b, &ipm.coeffs) {
        if let Some(vertex) = interpolate(q, b, &rows) {
            let f = l1_residual(q, b, &vertex);
            if f <= objective {
                coeffs = vertex;
                objective = f;
            }
        }
    }

    Ok(L1Solution {
        objective,
        coeffs,
        iterations: ipm.iterations,
        status: ipm.status,
    })
}

struct IpmOutcome {
    coeffs: Vec<f64>,
    iterations: usize,
    status: SolveStatus,
}

struct InteriorPoint<'a> {
    q: &'a [f64],
    b: &'a DenseMatrix,
    opts: &'a SolverOptions,
    v: Vec<f64>,
    u: Vec<f64>,
    w: Vec<f64>,
    y: Vec<f64>,
}

struct Direction {
    dv: Vec<f64>,
    du: Vec<f64>,
    dw: Vec<f64>,
    dy: Vec<f64>,
}

impl<'a> InteriorPoint<'a> {
    fn new(q: &'a [f64], b: &'a DenseMatrix, opts: &'a SolverOptions) -> Self {
        let m = q.len();
        let v = warm_start(q, b);
        let e = residual(q, b, &v);
        let shift = (norm1(&e) / m as f64).max(1e-3) * 0.1;
        let u = e.iter().map(|&x| x.max(0.0) + shift).collect();
        let w = e.iter().map(|&x| (-x).max(0.0) + shift).collect();
        Self {
            q,
            b,
            opts,
            v,
            u,
            w,
            y: vec![0.0; m],
        }
    }

    fn run(mut self) -> IpmOutcome {
        let m = self.q.len();
        let r = self.b.cols();
        let mut best_v = self.v.clone();
        let mut best_f = l1_residual(self.q, self.b, &self.v);

        for iter in 0..self.opts.max_iterations {
            let f = l1_residual(self.q, self.b, &self.v);
            if f < best_f {
                best_f = f;
                best_v.clone_from(&self.v);
            }
            let dual = dot(self.q, &self.y);
            let dual_infeas = self
                .b
                .transpose_matvec(&self.y)
                .expect("shapes fixed")
                .iter()
                .fold(0.0f64, |a, x| a.max(x.abs()));
            if best_f - dual <= self.opts.tolerance * (1.0 + best_f.abs())
                && dual_infeas <= DUAL_FEASIBILITY * (1.0 + m as f64)
            {
                return IpmOutcome {
                    coeffs: best_v,
                    iterations: iter,
                    status: SolveStatus::Converged,
                };
            }

            let su: Vec<f64> = self.y.iter().map(|y| 1.0 - y).collect();
            let sw: Vec<f64> = self.y.iter().map(|y| 1.0 + y).collect();
            let mu = (dot(&self.u, &su) + dot(&self.w, &sw)) / (2 * m) as f64;

            let rp: Vec<f64> = (0..m)
                .map(|i| self.q[i] - dot(self.b.row(i), &self.v) - self.u[i] + self.w[i])
                .collect();
            let rd: Vec<f64> = self
                .b
                .transpose_matvec(&self.y)
                .expect("shapes fixed")
                .into_iter()
                .map(|x| -x)
                .collect();
            let dinv: Vec<f64> = (0..m)
                .map(|i| 1.0 / (self.u[i] / su[i] + self.w[i] / sw[i]))
                .collect();
            let Some(normal) = NormalMatrix::factor(self.b, &dinv) else {
                break;
            };

            // predictor
            let ru: Vec<f64> = (0..m).map(|i| -self.u[i] * su[i]).collect();
            let rw: Vec<f64> = (0..m).map(|i| -self.w[i] * sw[i]).collect();
            let aff = self.direction(&normal, &dinv, &rp, &rd, &ru, &rw, &su, &sw);
            let (ap, ad) = self.step_lengths(&aff, &su, &sw, 1.0);
            let mu_aff = (0..m)
                .map(|i| {
                    (self.u[i] + ap * aff.du[i]) * (su[i] - ad * aff.dy[i])
                        + (self.w[i] + ap * aff.dw[i]) * (sw[i] + ad * aff.dy[i])
                })
                .sum::<f64>()
                / (2 * m) as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // corrector
            let ru: Vec<f64> = (0..m)
                .map(|i| sigma * mu - self.u[i] * su[i] + aff.du[i] * aff.dy[i])
                .collect();
            let rw: Vec<f64> = (0..m)
                .map(|i| sigma * mu - self.w[i] * sw[i] - aff.dw[i] * aff.dy[i])
                .collect();
            let dir = self.direction(&normal, &dinv, &rp, &rd, &ru, &rw, &su, &sw);
            let (ap, ad) = self.step_lengths(&dir, &su, &sw, STEP_FRACTION);
            if !(ap > 0.0 || ad > 0.0) || dir.dv.iter().any(|x| !x.is_finite()) {
                break;
            }

            for k in 0..r {
                self.v[k] += ap * dir.dv[k];
            }
            for i in 0..m {
                self.u[i] = (self.u[i] + ap * dir.du[i]).max(f64::MIN_POSITIVE);
                self.w[i] = (self.w[i] + ap * dir.dw[i]).max(f64::MIN_POSITIVE);
                self.y[i] = (self.y[i] + ad * dir.dy[i]).clamp(-1.0 + 1e-300, 1.0 - 1e-300);
            }
        }

        let f = l1_residual(self.q, self.b, &self.v);
        if f < best_f {
            best_v = self.v;
        }
        IpmOutcome {
            coeffs: best_v,
            iterations: self.opts.max_iterations,
            status: SolveStatus::MaxIters,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        normal: &NormalMatrix,
        dinv: &[f64],
        rp: &[f64],
        rd: &[f64],
        ru: &[f64],
        rw: &[f64],
        su: &[f64],
        sw: &[f64],
    ) -> Direction {
        let m = rp.len();
        let h: Vec<f64> = (0..m).map(|i| rp[i] - ru[i] / su[i] + rw[i] / sw[i]).collect();
        let hd: Vec<f64> = (0..m).map(|i| h[i] * dinv[i]).collect();
        let mut rhs = self.b.transpose_matvec(&hd).expect("shapes fixed");
        for (x, d) in rhs.iter_mut().zip(rd) {
            *x -= d;
        }
        let dv = normal.solve(&rhs);
        let dy: Vec<f64> = (0..m)
            .map(|i| (h[i] - dot(self.b.row(i), &dv)) * dinv[i])
            .collect();
        let du = (0..m).map(|i| (ru[i] + self.u[i] * dy[i]) / su[i]).collect();
        let dw = (0..m).map(|i| (rw[i] - self.w[i] * dy[i]) / sw[i]).collect();
        Direction { dv, du, dw, dy }
    }

    fn step_lengths(&self, d: &Direction, su: &[f64], sw: &[f64], fraction: f64) -> (f64, f64) {
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for i in 0..su.len() {
            if d.du[i] < 0.0 {
                ap = ap.min(-self.u[i] / d.du[i]);
            }
            if d.dw[i] < 0.0 {
                ap = ap.min(-self.w[i] / d.dw[i]);
            }
            if d.dy[i] > 0.0 {
                ad = ad.min(su[i] / d.dy[i]);
            } else if d.dy[i] < 0.0 {
                ad = ad.min(-sw[i] / d.dy[i]);
            }
        }
        ((fraction * ap).min(1.0), (fraction * ad).min(1.0))
    }
}

/// Cholesky factor of `Bᵀ diag(dinv) B`.
struct NormalMatrix {
    n: usize,
    l: Vec<f64>,
}

impl NormalMatrix {
    fn factor(b: &DenseMatrix, dinv: &[f64]) -> Option<Self> {
        let r = b.cols();
        let mut a = vec![0.0; r * r];
        for (i, &d) in dinv.iter().enumerate() {
            let row = b.row(i);
            for p in 0..r {
                let s = d * row[p];
                for k in 0..=p {
                    a[p * r + k] += s * row[k];
                }
            }
        }
        let diag_max = (0..r).map(|p| a[p * r + p]).fold(0.0f64, f64::max);
        if !(diag_max > 0.0) || !diag_max.is_finite() {
            return None;
        }
        // Tiny ridge keeps the factorization alive when the iterate is very
        // close to a degenerate vertex.
        let ridge = diag_max * 1e-14;
        for attempt in 0..3 {
            let mut l = vec![0.0; r * r];
            let mut ok = true;
            'outer: for i in 0..r {
                for j in 0..=i {
                    let mut s = a[i * r + j];
                    if i == j {
                        s += ridge * 100f64.powi(attempt);
                    }
                    for k in 0..j {
                        s -= l[i * r + k] * l[j * r + k];
                    }
                    if i == j {
                        if !(s > 0.0) {
                            ok = false;
                            break 'outer;
                        }
                        l[i * r + i] = s.sqrt();
                    } else {
                        l[i * r + j] = s / l[j * r + j];
                    }
                }
            }
            if ok {
                return Some(Self { n: r, l });
            }
        }
        None
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, l) = (self.n, &self.l);
        let mut y = rhs.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= l[i * n + k] * y[k];
            }
            y[i] /= l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= l[k * n + i] * y[k];
            }
            y[i] /= l[i * n + i];
        }
        y
    }
}

/// Least-squares start, refined by reweighted least squares on tall problems.
fn warm_start(q: &[f64], b: &DenseMatrix) -> Vec<f64> {
    let m = q.len();
    let mut weights = vec![1.0; m];
    let passes = if m >= IRLS_MIN_ROWS { 1 + IRLS_PASSES } else { 1 };
    let mut v = vec![0.0; b.cols()];
    for _ in 0..passes {
        let Some(normal) = NormalMatrix::factor(b, &weights) else {
            break;
        };
        let wq: Vec<f64> = q.iter().zip(&weights).map(|(a, w)| a * w).collect();
        let rhs = b.transpose_matvec(&wq).expect("shapes fixed");
        let next = normal.solve(&rhs);
        if next.iter().any(|x| !x.is_finite()) {
            break;
        }
        v = next;
        let e = residual(q, b, &v);
        let floor = (norm1(&e) / m as f64).max(1e-12) * 1e-3;
        weights = e.iter().map(|x| 1.0 / x.abs().max(floor)).collect();
    }
    v
}

/// Picks the `r` rows with the smallest residuals that form a
/// well-conditioned block.
fn vertex_rows(q: &[f64], b: &DenseMatrix, v: &[f64]) -> Option<Vec<usize>> {
    let r = b.cols();
    let e = residual(q, b, v);
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&i, &j| e[i].abs().total_cmp(&e[j].abs()).then(i.cmp(&j)));

    let mut chosen: Vec<usize> = Vec::with_capacity(r);
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(r);
    for &i in &order {
        let row = b.row(i);
        let norm0 = dot(row, row).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut x = row.to_vec();
        for _pass in 0..2 {
            for o in &ortho {
                let c = dot(o, &x);
                x.iter_mut().zip(o).for_each(|(a, b)| *a -= c * b);
            }
        }
        let n = dot(&x, &x).sqrt();
        if n > 1e-8 * norm0 {
            x.iter_mut().for_each(|a| *a /= n);
            ortho.push(x);
            chosen.push(i);
            if chosen.len() == r {
                break;
            }
        }
    }
    (chosen.len() == r).then_some(chosen)
}

/// Solves `B_rows v = q_rows`.
fn interpolate(q: &[f64], b: &DenseMatrix, rows: &[usize]) -> Option<Vec<f64>> {
    let a: Vec<f64> = rows.iter().flat_map(|&i| b.row(i).iter().copied()).collect();
    let rhs: Vec<f64> = rows.iter().map(|&i| q[i]).collect();
    lu_solve(&a, rows.len(), &rhs, 1e-13)
}

/// Result of the enumeration oracle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleValue {
    pub objective: f64,
    /// Set when no `r × r` row block was invertible and the value comes from
    /// a pattern search instead of exact enumeration.
    pub approximate: bool,
}

pub const ORACLE_MAX_ROWS: usize = 14;
pub const ORACLE_MAX_RANK: usize = 3;

/// Exhaustive ground truth for small problems. Some optimal `v` of an ℓ1
/// regression interpolates `q` on `r` rows, so the minimum over all
/// invertible `r`-row blocks (and `v = 0`) is the optimum.
pub fn oracle_l1(q: &[f64], b: &DenseMatrix) -> Result<OracleValue> {
    let (m, r) = b.shape();
    if q.len() != m {
        return Err(Error::DimensionMismatch {
            op: "oracle_l1",
            left: b.shape(),
            right: (q.len(), 1),
        });
    }
    if m > ORACLE_MAX_ROWS || r > ORACLE_MAX_RANK || r == 0 || r > m {
        return Err(Error::invalid(format!(
            "oracle limited to r <= m, m <= {ORACLE_MAX_ROWS}, 1 <= r <= {ORACLE_MAX_RANK}; got m={m}, r={r}"
        )));
    }
    let mut best = norm1(q);
    let mut any = false;
    let mut subset: Vec<usize> = (0..r).collect();
    loop {
        let a: Vec<f64> = subset.iter().flat_map(|&i| b.row(i).iter().copied()).collect();
        let rhs: Vec<f64> = subset.iter().map(|&i| q[i]).collect();
        if let Some(v) = lu_solve(&a, r, &rhs, 1e-12) {
            any = true;
            best = best.min(l1_residual(q, b, &v));
        }
        if !next_combination(&mut subset, m) {
            break;
        }
    }
    if any {
        return Ok(OracleValue {
            objective: best,
            approximate: false,
        });
    }
    Ok(OracleValue {
        objective: best.min(pattern_search(q, b)),
        approximate: true,
    })
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Coordinate pattern search with a halving step, used only when no exact
/// vertex exists.
fn pattern_search(q: &[f64], b: &DenseMatrix) -> f64 {
    let r = b.cols();
    let mut v = vec![0.0; r];
    let mut f = l1_residual(q, b, &v);
    let mut step = q.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
    while step > 1e-12 {
        let mut improved = false;
        for k in 0..r {
            for sign in [1.0, -1.0] {
                v[k] += sign * step;
                let g = l1_residual(q, b, &v);
                if g < f {
                    f = g;
                    improved = true;
                } else {
                    v[k] -= sign * step;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    f
}

/// ℓ1 distance from `q` to the subspace spanned by `s`.
pub fn distance_to_subspace(
    q: &QueryVector,
    s: &SubspaceModel,
    opts: &SolverOptions,
) -> Result<DistanceRecord> {
    if q.len() != s.ambient_dim() {
        return Err(Error::DimensionMismatch {
            op: "distance_to_subspace",
            left: s.basis().shape(),
            right: (q.len(), 1),
        });
    }
    let sol = solve_l1(q.values(), s.basis(), opts)?;
    if sol.status == SolveStatus::MaxIters {
        log::warn!(
            "subspace {}: iteration cap reached, reporting best iterate",
            s.id()
        );
    }
    Ok(DistanceRecord {
        subspace_id: s.id(),
        distance: sol.objective,
        coeffs: sol.coeffs,
    })
}
