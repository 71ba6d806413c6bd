//! Density-matrix reconstruction from coincidence counts.
//!
//! The fast path solves the weighted linear system `w M · S = w C` for the
//! Stokes vector, maps it to a Hermitian matrix and truncates negative
//! eigenvalues. The slow path maximizes the Poisson likelihood over a
//! Cholesky-style parameterization and serves as the reference estimator.

use std::time::Instant;

use nalgebra::{Cholesky, SMatrix, SVector, SymmetricEigen, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measurement::{CountRecord, MeasurementMatrix};
use crate::quantum::{
    assemble, c, density_from_stokes, hermitian_eigen, symmetrize, DensityMatrix, Matrix4c,
    PureState2Q, StokesVector2Q,
};

type Mat16 = SMatrix<f64, 16, 16>;
type Vec16 = SVector<f64, 16>;

/// Relative eigenvalue threshold below which a Stokes direction counts as
/// unconstrained by the data.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconstructionError {
    #[error("no count records supplied")]
    NoData,
    #[error("record refers to unknown setting {0}")]
    UnknownSetting(usize),
    #[error("measurements have rank {rank} < 16; unconstrained Stokes directions: {}", missing.join(", "))]
    RankDeficient { rank: usize, missing: Vec<String> },
    #[error("degenerate data: no positive eigenvalue to keep")]
    Degenerate,
    #[error("input matrix is not Hermitian")]
    NotHermitian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lls,
    Ml,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Lls => "lls",
            Method::Ml => "ml",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lls" => Ok(Method::Lls),
            "ml" => Ok(Method::Ml),
            other => Err(format!("unknown method {other:?}; expected lls or ml")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconFlag {
    /// Some counts went negative after background subtraction and were
    /// clamped to zero.
    ClampedNegativeCounts,
    /// The likelihood maximizer hit its iteration cap or stalled above the
    /// gradient tolerance.
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlsOptions {
    pub subtract_accidentals: bool,
    /// Fit per-setting probabilities (counts over the setting total) rather
    /// than raw counts with one global intensity.
    pub normalize_per_setting: bool,
}

impl Default for LlsOptions {
    fn default() -> Self {
        Self {
            subtract_accidentals: true,
            normalize_per_setting: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlOptions {
    /// Fit background-subtracted counts. When off, the raw counts are fitted
    /// and the known accidental/dark means enter the model instead.
    pub subtract_accidentals: bool,
    /// Convergence threshold on the gradient norm of the per-count negative
    /// log-likelihood.
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for MlOptions {
    fn default() -> Self {
        Self {
            subtract_accidentals: true,
            grad_tol: 1e-7,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionReport {
    pub rho: DensityMatrix,
    /// Stokes vector before legalization (LLS) or of the final state (ML).
    pub raw_stokes: StokesVector2Q,
    /// Sum of magnitudes of the clipped negative eigenvalues.
    pub truncated_mass: f64,
    /// Weighted RMS residual of the fit, in units of standard deviations.
    pub residual: f64,
    /// Wall-clock solve time, seconds.
    pub solve_time: f64,
    pub method: Method,
    pub flags: Vec<ReconFlag>,
    pub iterations: usize,
}

/// Inverse standard deviations, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(pub Vec<f64>);

/// `w_r = 1 / √max(C_r, 1)` for every outcome of every record, in record
/// order.
pub fn weights_from_counts(records: &[CountRecord]) -> WeightVector {
    WeightVector(
        records
            .iter()
            .flat_map(|r| r.counts.iter().map(|&n| count_weight(n)))
            .collect(),
    )
}

#[inline]
fn count_weight(n: u64) -> f64 {
    1.0 / (n.max(1) as f64).sqrt()
}

/// Clips negative eigenvalues of a Hermitian matrix and rescales the rest to
/// unit sum. Legal states pass through unchanged.
pub fn legalize_psd(h: &Matrix4c) -> Result<DensityMatrix, ReconstructionError> {
    truncate_spectrum(h).map(|(rho, _)| rho)
}

/// As [`legalize_psd`], also returning the clipped negative mass.
pub fn truncate_spectrum(h: &Matrix4c) -> Result<(DensityMatrix, f64), ReconstructionError> {
    if crate::quantum::hermitian_deviation(h) > 1e-9 {
        return Err(ReconstructionError::NotHermitian);
    }
    if let Ok(rho) = DensityMatrix::new(*h) {
        if hermitian_eigen(h).0[0] >= 0.0 {
            return Ok((rho, 0.0));
        }
    }
    let (values, vectors) = hermitian_eigen(h);
    let positive: f64 = values.iter().filter(|v| **v > 0.0).sum();
    if !(positive > 0.0) {
        return Err(ReconstructionError::Degenerate);
    }
    let truncated: f64 = values.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
    let clipped = values.map(|v| v.max(0.0) / positive);
    let m = assemble(&clipped, &vectors);
    // fix the trace exactly; assembly round-off is ~1e-16
    let tr = m.trace().re;
    let m = symmetrize(&m.unscale(tr));
    let rho = DensityMatrix::new(m).map_err(|_| ReconstructionError::Degenerate)?;
    Ok((rho, truncated))
}

struct WeightedSystem {
    rows: Vec<([f64; 16], f64)>,
    clamped: bool,
}

fn background(record: &CountRecord, subtract: bool) -> [f64; 4] {
    if subtract {
        record.expected_accidentals
    } else {
        [0.0; 4]
    }
}

fn build_system(
    matrix: &MeasurementMatrix,
    records: &[CountRecord],
    options: &LlsOptions,
) -> Result<WeightedSystem, ReconstructionError> {
    if records.is_empty() {
        return Err(ReconstructionError::NoData);
    }
    let mut rows = Vec::with_capacity(4 * records.len());
    let mut clamped = false;
    for record in records {
        let model = matrix
            .rows_for(record.setting_id)
            .ok_or(ReconstructionError::UnknownSetting(record.setting_id))?;
        let bg = background(record, options.subtract_accidentals);
        let signal: [f64; 4] = std::array::from_fn(|r| {
            let v = record.counts[r] as f64 - bg[r];
            if v < 0.0 {
                clamped = true;
            }
            v.max(0.0)
        });
        let intensity = if options.normalize_per_setting {
            let total: f64 = signal.iter().sum();
            if total <= 0.0 {
                continue;
            }
            total
        } else {
            1.0
        };
        for r in 0..4 {
            let w = count_weight(record.counts[r]);
            rows.push((model[r].map(|m| w * intensity * m), w * signal[r]));
        }
    }
    Ok(WeightedSystem { rows, clamped })
}

fn null_direction_labels(eig: &SymmetricEigen<f64, nalgebra::U16>, threshold: f64) -> Vec<String> {
    let mut out = Vec::new();
    for k in 0..16 {
        if eig.eigenvalues[k] > threshold {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        let mut terms: Vec<(usize, f64)> = (0..16).filter(|&i| v[i].abs() > 0.1).map(|i| (i, v[i])).collect();
        terms.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
        let label = if terms.len() == 1 {
            StokesVector2Q::label(terms[0].0)
        } else {
            terms
                .iter()
                .map(|(i, w)| format!("{w:+.2}·{}", StokesVector2Q::label(*i)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        out.push(label);
    }
    out
}

/// Solves the normal equations, rejecting rank-deficient systems.
fn solve_stokes(system: &WeightedSystem) -> Result<Vec16, ReconstructionError> {
    let mut normal = Mat16::zeros();
    let mut rhs = Vec16::zeros();
    for (a, b) in &system.rows {
        let a = Vec16::from_column_slice(a);
        normal.ger(1.0, &a, &a, 1.0);
        rhs.axpy(*b, &a, 1.0);
    }
    let eig = SymmetricEigen::new(normal);
    let max = eig.eigenvalues.max();
    let threshold = RANK_TOL * max.max(f64::MIN_POSITIVE);
    let rank = eig.eigenvalues.iter().filter(|&&l| l > threshold).count();
    if rank < 16 {
        return Err(ReconstructionError::RankDeficient {
            rank,
            missing: null_direction_labels(&eig, threshold),
        });
    }
    let projected = eig.eigenvectors.transpose() * rhs;
    let scaled = Vec16::from_fn(|k, _| projected[k] / eig.eigenvalues[k]);
    Ok(eig.eigenvectors * scaled)
}

/// Checks that the given records constrain all 16 Stokes directions.
pub fn check_rank(
    matrix: &MeasurementMatrix,
    records: &[CountRecord],
) -> Result<(), ReconstructionError> {
    if records.is_empty() {
        return Err(ReconstructionError::NoData);
    }
    let mut rows = Vec::with_capacity(4 * records.len());
    for record in records {
        let model = matrix
            .rows_for(record.setting_id)
            .ok_or(ReconstructionError::UnknownSetting(record.setting_id))?;
        rows.extend(model.iter().map(|row| (*row, 0.0)));
    }
    let system = WeightedSystem {
        rows,
        clamped: false,
    };
    solve_stokes(&system).map(|_| ())
}

/// Weighted linear least-squares fit followed by eigenvalue truncation.
pub fn lls_reconstruct(
    matrix: &MeasurementMatrix,
    records: &[CountRecord],
    options: &LlsOptions,
) -> Result<ReconstructionReport, ReconstructionError> {
    let start = Instant::now();
    let system = build_system(matrix, records, options)?;
    let mut s = solve_stokes(&system)?;
    let residual = {
        let sum: f64 = system
            .rows
            .iter()
            .map(|(a, b)| {
                let pred: f64 = a.iter().zip(s.iter()).map(|(x, y)| x * y).sum();
                (pred - b).powi(2)
            })
            .sum();
        (sum / system.rows.len().max(1) as f64).sqrt()
    };
    if !options.normalize_per_setting {
        if !(s[0] > 0.0) {
            return Err(ReconstructionError::Degenerate);
        }
        s /= s[0];
    }
    let raw = StokesVector2Q(std::array::from_fn(|k| s[k]));
    let (rho, truncated_mass) = truncate_spectrum(&density_from_stokes(&raw))?;
    let mut flags = Vec::new();
    if system.clamped {
        flags.push(ReconFlag::ClampedNegativeCounts);
    }
    Ok(ReconstructionReport {
        rho,
        raw_stokes: raw,
        truncated_mass,
        residual,
        solve_time: start.elapsed().as_secs_f64(),
        method: Method::Lls,
        flags,
        iterations: 1,
    })
}

/// Upper-triangular factor `T` with `ρ ∝ T†T`, packed as 16 reals: the four
/// real diagonal entries, then `(re, im)` of `T_01, T_02, T_03, T_12, T_13,
/// T_23`.
pub mod factor {
    use super::*;

    pub const OFF_DIAGONAL: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

    pub fn unpack(t: &[f64; 16]) -> Matrix4c {
        let mut m = Matrix4c::zeros();
        for k in 0..4 {
            m[(k, k)] = c(t[k], 0.0);
        }
        for (p, &(k, l)) in OFF_DIAGONAL.iter().enumerate() {
            m[(k, l)] = c(t[4 + 2 * p], t[5 + 2 * p]);
        }
        m
    }

    /// `T†T / Tr(T†T)`.
    pub fn density(t: &[f64; 16]) -> Option<DensityMatrix> {
        let tm = unpack(t);
        let g: f64 = t.iter().map(|v| v * v).sum();
        if !(g > 0.0) {
            return None;
        }
        let m = symmetrize(&(tm.adjoint() * tm).unscale(g));
        DensityMatrix::new(m).ok()
    }

    /// Factor of `(1 - ε) ρ + ε I/4`, which is always positive definite.
    pub fn pack(rho: &DensityMatrix, epsilon: f64) -> [f64; 16] {
        let m = rho.matrix().scale(1.0 - epsilon) + Matrix4c::identity().scale(epsilon / 4.0);
        let l = Cholesky::new(symmetrize(&m))
            .expect("regularized state is positive definite")
            .unpack();
        // ρ = L L† = T† T with T = L†
        let tm = l.adjoint();
        let mut t = [0.0; 16];
        for k in 0..4 {
            t[k] = tm[(k, k)].re;
        }
        for (p, &(k, l)) in OFF_DIAGONAL.iter().enumerate() {
            t[4 + 2 * p] = tm[(k, l)].re;
            t[5 + 2 * p] = tm[(k, l)].im;
        }
        t
    }
}

/// Per-row data for the likelihood.
#[derive(Debug, Clone)]
pub struct LikelihoodRow {
    pub projector: Vector4<Complex64>,
    pub counts: f64,
    pub background: f64,
    pub intensity: f64,
}

/// Poisson negative log-likelihood `-Σ [C ln μ - μ]` divided by the total
/// count, with `μ_r = I_r ⟨π_r|ρ|π_r⟩ + b_r` and `ρ = T†T / Tr(T†T)`.
#[derive(Debug, Clone)]
pub struct Likelihood {
    pub rows: Vec<LikelihoodRow>,
    scale: f64,
}

impl Likelihood {
    pub fn new(
        matrix: &MeasurementMatrix,
        records: &[CountRecord],
        subtract_accidentals: bool,
    ) -> Result<Self, ReconstructionError> {
        if records.is_empty() {
            return Err(ReconstructionError::NoData);
        }
        let mut rows = Vec::with_capacity(4 * records.len());
        let mut total = 0.0;
        for record in records {
            let model = matrix
                .rows_for(record.setting_id)
                .ok_or(ReconstructionError::UnknownSetting(record.setting_id))?;
            let raw = record.counts.map(|n| n as f64);
            let acc = record.expected_accidentals;
            // Either the data are background-subtracted, or the model
            // carries the background; never both.
            let (counts, bg) = if subtract_accidentals {
                (std::array::from_fn::<f64, 4, _>(|r| (raw[r] - acc[r]).max(0.0)), [0.0; 4])
            } else {
                (raw, acc)
            };
            let intensity = (counts.iter().sum::<f64>() - bg.iter().sum::<f64>()).max(0.0);
            for r in 0..4 {
                rows.push(LikelihoodRow {
                    projector: projector_from_row(&model[r]),
                    counts: counts[r],
                    background: bg[r],
                    intensity,
                });
                total += counts[r];
            }
        }
        Ok(Self {
            rows,
            scale: 1.0 / total.max(1.0),
        })
    }

    /// Objective value and gradient with respect to the 16 packed reals.
    pub fn evaluate(&self, t: &[f64; 16]) -> (f64, [f64; 16]) {
        let tm = factor::unpack(t);
        let g: f64 = t.iter().map(|v| v * v).sum();
        let mut f = 0.0;
        let mut grad = [0.0; 16];
        for row in &self.rows {
            let v = tm * row.projector;
            let q = v.norm_squared();
            let p = q / g;
            let mu = row.intensity * p + row.background;
            if row.counts > 0.0 {
                if !(mu > 0.0) {
                    return (f64::INFINITY, grad);
                }
                f -= row.counts * mu.ln() - mu;
            } else {
                f += mu;
            }
            let dmu = if row.counts > 0.0 {
                -(row.counts / mu - 1.0)
            } else {
                1.0
            };
            // d f / d q = dmu · I / g ;  d f / d g = -dmu · I · q / g²
            let dq = dmu * row.intensity / g;
            let dg = -dmu * row.intensity * q / (g * g);
            let pi = &row.projector;
            for k in 0..4 {
                grad[k] += dq * 2.0 * (v[k].conj() * pi[k]).re;
            }
            for (p, &(k, l)) in factor::OFF_DIAGONAL.iter().enumerate() {
                let z = v[k].conj() * pi[l];
                grad[4 + 2 * p] += dq * 2.0 * z.re;
                grad[5 + 2 * p] -= dq * 2.0 * z.im;
            }
            for (gk, tk) in grad.iter_mut().zip(t) {
                *gk += dg * 2.0 * tk;
            }
        }
        (f * self.scale, grad.map(|x| x * self.scale))
    }
}

/// Recovers the projector ket from its Stokes row. Rows built from pure
/// projectors are rank one, so the dominant eigenvector is exact.
fn projector_from_row(row: &[f64; 16]) -> Vector4<Complex64> {
    let s = StokesVector2Q(row.map(|v| 4.0 * v));
    let (values, vectors) = hermitian_eigen(&density_from_stokes(&s));
    vectors.column(3).scale(values[3].max(0.0).sqrt())
}

struct Outcome {
    t: [f64; 16],
    iterations: usize,
    converged: bool,
}


/// BFGS with Armijo backtracking on the inverse-Hessian approximation.
fn minimize(lik: &Likelihood, start: [f64; 16], options: &MlOptions) -> Outcome {
    let mut x = Vec16::from_column_slice(&start);
    let (mut f, g0) = lik.evaluate(&start);
    let mut g = Vec16::from_column_slice(&g0);
    let mut h = Mat16::identity();
    let mut fresh = true;
    let mut iterations = 0;
    while iterations < options.max_iter {
        if g.norm() < options.grad_tol {
            return Outcome {
                t: arr(&x),
                iterations,
                converged: true,
            };
        }
        iterations += 1;
        let mut d = -(h * g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h = Mat16::identity();
            fresh = true;
            d = -g;
            slope = g.dot(&d);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = x + d * alpha;
            let (ft, gt) = lik.evaluate(&arr(&trial));
            if ft.is_finite() && ft <= f + 1e-4 * alpha * slope {
                accepted = Some((trial, ft, Vec16::from_column_slice(&gt)));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if fresh {
                break;
            }
            h = Mat16::identity();
            fresh = true;
            continue;
        };
        let s = x_new - x;
        let y = g_new - g;
        let sy = s.dot(&y);
        if sy > 1e-14 * s.norm() * y.norm() {
            if fresh {
                h = Mat16::identity() * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let hy = h * y;
            h += (s * s.transpose()) * ((sy + y.dot(&hy)) * rho * rho)
                - (hy * s.transpose() + s * hy.transpose()) * rho;
            fresh = false;
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    let converged = g.norm() < options.grad_tol;
    Outcome {
        t: arr(&x),
        iterations,
        converged,
    }
}

fn arr(v: &Vec16) -> [f64; 16] {
    std::array::from_fn(|k| v[k])
}

/// Poisson maximum-likelihood reconstruction, started from the LLS
/// estimate.
pub fn ml_reconstruct(
    matrix: &MeasurementMatrix,
    records: &[CountRecord],
    options: &MlOptions,
) -> Result<ReconstructionReport, ReconstructionError> {
    let lls = lls_reconstruct(
        matrix,
        records,
        &LlsOptions {
            subtract_accidentals: options.subtract_accidentals,
            normalize_per_setting: true,
        },
    )?;
    ml_reconstruct_from(matrix, records, options, &lls.rho)
}

/// Maximum-likelihood reconstruction from an explicit starting state.
pub fn ml_reconstruct_from(
    matrix: &MeasurementMatrix,
    records: &[CountRecord],
    options: &MlOptions,
    start_state: &DensityMatrix,
) -> Result<ReconstructionReport, ReconstructionError> {
    let start = Instant::now();
    let lik = Likelihood::new(matrix, records, options.subtract_accidentals)?;
    let t0 = factor::pack(start_state, 1e-6);
    let outcome = minimize(&lik, t0, options);
    let rho = factor::density(&outcome.t).ok_or(ReconstructionError::Degenerate)?;
    let residual = {
        let mut sum = 0.0;
        for row in &lik.rows {
            let psi = PureState2Q::normalized([
                row.projector[0],
                row.projector[1],
                row.projector[2],
                row.projector[3],
            ])
            .map_err(|_| ReconstructionError::Degenerate)?;
            let mu = row.intensity * psi.expectation(rho.matrix()) + row.background;
            sum += (row.counts - mu).powi(2) / row.counts.max(1.0);
        }
        (sum / lik.rows.len() as f64).sqrt()
    };
    let mut flags = Vec::new();
    if !outcome.converged {
        flags.push(ReconFlag::NotConverged);
    }
    Ok(ReconstructionReport {
        raw_stokes: rho.stokes(),
        rho,
        truncated_mass: 0.0,
        residual,
        solve_time: start.elapsed().as_secs_f64(),
        method: Method::Ml,
        flags,
        iterations: outcome.iterations,
    })
}

/// Dispatches on `method`.
pub fn reconstruct(
    method: Method,
    matrix: &MeasurementMatrix,
    records: &[CountRecord],
    lls: &LlsOptions,
    ml: &MlOptions,
) -> Result<ReconstructionReport, ReconstructionError> {
    match method {
        Method::Lls => lls_reconstruct(matrix, records, lls),
        Method::Ml => ml_reconstruct(matrix, records, ml),
    }
}
