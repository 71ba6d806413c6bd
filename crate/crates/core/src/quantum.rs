//! Two-qubit state algebra.
//!
//! Everything here is fixed at two qubits: 4×4 complex matrices in the
//! `{HH, HV, VH, VV}` basis (qubit 1 is the signal arm, qubit 2 the idler),
//! and the 16-component Stokes vector `S_ij = Tr(ρ σ_i ⊗ σ_j)` with
//! `σ_0 = I`.

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense 4×4 complex matrix.
pub type Matrix4c = Matrix4<Complex64>;
/// Dense 2×2 complex matrix.
pub type Matrix2c = Matrix2<Complex64>;

/// Labels of the two-qubit computational basis, in matrix order.
pub const BASIS_LABELS: [&str; 4] = ["HH", "HV", "VH", "VV"];

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-9;
const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("state vector norm is {norm}, expected 1")]
    NotNormalized { norm: f64 },
    #[error("matrix is not Hermitian (max |ρ - ρ†| = {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("trace is {trace}, expected 1")]
    TraceNotUnit { trace: f64 },
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositive { min_eigenvalue: f64 },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("expected {expected} values, got {got}")]
    WrongLength { expected: usize, got: usize },
}

#[inline]
pub(crate) fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Pauli matrix `σ_i`, with `σ_0 = I`.
pub fn pauli(i: usize) -> Matrix2c {
    let (o, z, j) = (c(1.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
    match i {
        0 => Matrix2c::new(o, z, z, o),
        1 => Matrix2c::new(z, o, o, z),
        2 => Matrix2c::new(z, -j, j, z),
        3 => Matrix2c::new(o, z, z, -o),
        _ => panic!("Pauli index {i} out of range"),
    }
}

pub fn kron(a: &Matrix2c, b: &Matrix2c) -> Matrix4c {
    Matrix4c::from_fn(|r, col| a[(r / 2, col / 2)] * b[(r % 2, col % 2)])
}

/// `σ_i ⊗ σ_j`.
pub fn pauli_pair(i: usize, j: usize) -> Matrix4c {
    kron(&pauli(i), &pauli(j))
}

fn pauli_table() -> &'static [Matrix4c; 16] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<[Matrix4c; 16]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(|k| pauli_pair(k / 4, k % 4)))
}

/// Largest elementwise `|m - m†|`.
pub fn hermitian_deviation(m: &Matrix4c) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..4 {
        for col in 0..4 {
            worst = worst.max((m[(r, col)] - m[(col, r)].conj()).norm());
        }
    }
    worst
}

/// `(m + m†) / 2`.
pub fn symmetrize(m: &Matrix4c) -> Matrix4c {
    (m + m.adjoint()).scale(0.5)
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted ascending.
/// Column `k` of the returned matrix is the eigenvector for `values[k]`.
pub fn hermitian_eigen(m: &Matrix4c) -> ([f64; 4], Matrix4c) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.map(|k| eig.eigenvalues[k]);
    let vectors = Matrix4c::from_fn(|r, col| eig.eigenvectors[(r, order[col])]);
    (values, vectors)
}

/// `V diag(values) V†`.
pub fn assemble(values: &[f64; 4], vectors: &Matrix4c) -> Matrix4c {
    let mut out = Matrix4c::zeros();
    for (k, &lambda) in values.iter().enumerate() {
        if lambda == 0.0 {
            continue;
        }
        let v = vectors.column(k);
        out += (v * v.adjoint()).scale(lambda);
    }
    symmetrize(&out)
}

/// Principal square root of a Hermitian PSD matrix. Eigenvalues down to
/// `-1e-9` are treated as round-off and clamped to zero.
pub fn sqrt_psd(m: &Matrix4c) -> Result<Matrix4c, QuantumError> {
    let (values, vectors) = hermitian_eigen(m);
    if values[0] < -PSD_TOL {
        return Err(QuantumError::NotPositive {
            min_eigenvalue: values[0],
        });
    }
    Ok(assemble(&values.map(|v| v.max(0.0).sqrt()), &vectors))
}

/// Normalized two-qubit pure state in `{HH, HV, VH, VV}` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PureState2Q(Vector4<Complex64>);

impl PureState2Q {
    pub fn new(amplitudes: [Complex64; 4]) -> Result<Self, QuantumError> {
        let v = Vector4::from(amplitudes);
        if amplitudes.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(QuantumError::NonFinite);
        }
        let norm = v.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(QuantumError::NotNormalized { norm });
        }
        Ok(Self(v))
    }

    /// Normalizes arbitrary nonzero amplitudes.
    pub fn normalized(amplitudes: [Complex64; 4]) -> Result<Self, QuantumError> {
        let v = Vector4::from(amplitudes);
        let norm = v.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(QuantumError::NotNormalized { norm });
        }
        Ok(Self(v.unscale(norm)))
    }

    /// Product state of two single-qubit kets.
    pub fn product(a: [Complex64; 2], b: [Complex64; 2]) -> Result<Self, QuantumError> {
        Self::normalized([a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]])
    }

    fn basis(k: usize) -> Self {
        let mut v = Vector4::zeros();
        v[k] = c(1.0, 0.0);
        Self(v)
    }

    pub fn hh() -> Self {
        Self::basis(0)
    }
    pub fn hv() -> Self {
        Self::basis(1)
    }
    pub fn vh() -> Self {
        Self::basis(2)
    }
    pub fn vv() -> Self {
        Self::basis(3)
    }

    fn bell(a: usize, b: usize, sign: f64) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut v = Vector4::zeros();
        v[a] = c(s, 0.0);
        v[b] = c(sign * s, 0.0);
        Self(v)
    }

    /// `(|HH⟩ + |VV⟩)/√2`
    pub fn phi_plus() -> Self {
        Self::bell(0, 3, 1.0)
    }
    pub fn phi_minus() -> Self {
        Self::bell(0, 3, -1.0)
    }
    pub fn psi_plus() -> Self {
        Self::bell(1, 2, 1.0)
    }
    pub fn psi_minus() -> Self {
        Self::bell(1, 2, -1.0)
    }

    /// Looks up a named state: `HH`, `HV`, `VH`, `VV`, `phi+`, `phi-`,
    /// `psi+`, `psi-`.
    pub fn named(name: &str) -> Option<Self> {
        Some(match name {
            "HH" => Self::hh(),
            "HV" => Self::hv(),
            "VH" => Self::vh(),
            "VV" => Self::vv(),
            "phi+" => Self::phi_plus(),
            "phi-" => Self::phi_minus(),
            "psi+" => Self::psi_plus(),
            "psi-" => Self::psi_minus(),
            _ => return None,
        })
    }

    pub fn amplitudes(&self) -> &Vector4<Complex64> {
        &self.0
    }

    /// `⟨ψ|m|ψ⟩`, real part.
    pub fn expectation(&self, m: &Matrix4c) -> f64 {
        (self.0.adjoint() * m * self.0)[(0, 0)].re
    }

    pub fn projector(&self) -> Matrix4c {
        self.0 * self.0.adjoint()
    }
}

/// Hermitian, unit-trace, positive semidefinite 4×4 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(Matrix4c);

impl DensityMatrix {
    /// Validates all three density-matrix invariants.
    pub fn new(m: Matrix4c) -> Result<Self, QuantumError> {
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(QuantumError::NonFinite);
        }
        let deviation = hermitian_deviation(&m);
        if deviation > HERMITIAN_TOL {
            return Err(QuantumError::NotHermitian { deviation });
        }
        let trace = m.trace().re;
        if (trace - 1.0).abs() > TRACE_TOL {
            return Err(QuantumError::TraceNotUnit { trace });
        }
        let (values, _) = hermitian_eigen(&m);
        if values[0] < -PSD_TOL {
            return Err(QuantumError::NotPositive {
                min_eigenvalue: values[0],
            });
        }
        Ok(Self(m))
    }

    pub fn from_pure(psi: &PureState2Q) -> Self {
        Self(psi.projector())
    }

    /// `I/4`.
    pub fn maximally_mixed() -> Self {
        Self(Matrix4c::identity().scale(0.25))
    }

    /// `(1 - p) ρ + p I/4`.
    pub fn depolarize(&self, p: f64) -> Self {
        let p = p.clamp(0.0, 1.0);
        Self(self.0.scale(1.0 - p) + Matrix4c::identity().scale(0.25 * p))
    }

    /// Convex mixture `Σ w_k ρ_k`; weights are renormalized.
    pub fn mixture(parts: &[(f64, DensityMatrix)]) -> Result<Self, QuantumError> {
        let total: f64 = parts.iter().map(|(w, _)| *w).sum();
        let mut m = Matrix4c::zeros();
        for (w, rho) in parts {
            m += rho.0.scale(*w / total);
        }
        Self::new(m)
    }

    pub fn matrix(&self) -> &Matrix4c {
        &self.0
    }

    pub fn eigenvalues(&self) -> [f64; 4] {
        hermitian_eigen(&self.0).0
    }

    pub fn stokes(&self) -> StokesVector2Q {
        stokes_from_density(self)
    }

    pub fn purity(&self) -> f64 {
        purity(self)
    }

    pub fn concurrence(&self) -> f64 {
        concurrence(self)
    }

    pub fn fidelity(&self, other: &DensityMatrix) -> f64 {
        fidelity(self, other)
    }

    /// Row-major `(re, im)` pairs.
    pub fn to_pairs(&self) -> [(f64, f64); 16] {
        std::array::from_fn(|k| {
            let z = self.0[(k / 4, k % 4)];
            (z.re, z.im)
        })
    }

    /// Row-major `re, im, re, im, ...` (32 reals).
    pub fn to_flat(&self) -> Vec<f64> {
        self.to_pairs().iter().flat_map(|&(re, im)| [re, im]).collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self, QuantumError> {
        if values.len() != 32 {
            return Err(QuantumError::WrongLength {
                expected: 32,
                got: values.len(),
            });
        }
        Self::new(Matrix4c::from_fn(|r, col| {
            let k = 2 * (r * 4 + col);
            c(values[k], values[k + 1])
        }))
    }
}

/// 16 real Pauli-basis coefficients, `S_ij` stored at index `4i + j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesVector2Q(pub [f64; 16]);

impl StokesVector2Q {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[4 * i + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Label such as `"XZ"` for `σ_1 ⊗ σ_3`.
    pub fn label(index: usize) -> String {
        const L: [char; 4] = ['I', 'X', 'Y', 'Z'];
        format!("{}{}", L[index / 4], L[index % 4])
    }

    /// `(1/4) Σ S_ij σ_i ⊗ σ_j`. The result is Hermitian with trace `S_00`
    /// but need not be positive.
    pub fn to_hermitian(&self) -> Matrix4c {
        density_from_stokes(self)
    }
}

/// `|ψ⟩⟨ψ|`.
pub fn density_from_pure(psi: &PureState2Q) -> DensityMatrix {
    DensityMatrix::from_pure(psi)
}

pub fn stokes_from_density(rho: &DensityMatrix) -> StokesVector2Q {
    stokes_of_matrix(rho.matrix())
}

/// `Tr(m σ_i ⊗ σ_j)` for an arbitrary matrix (real part).
pub fn stokes_of_matrix(m: &Matrix4c) -> StokesVector2Q {
    let table = pauli_table();
    StokesVector2Q(std::array::from_fn(|k| {
        // Tr(A B) = Σ_rc A_rc B_cr
        let p = &table[k];
        let mut acc = c(0.0, 0.0);
        for r in 0..4 {
            for col in 0..4 {
                acc += m[(r, col)] * p[(col, r)];
            }
        }
        acc.re
    }))
}

pub fn density_from_stokes(s: &StokesVector2Q) -> Matrix4c {
    let table = pauli_table();
    let mut m = Matrix4c::zeros();
    for (k, &coef) in s.0.iter().enumerate() {
        if coef != 0.0 {
            m += table[k].scale(0.25 * coef);
        }
    }
    m
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`, clamped to `[0, 1]`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> f64 {
    // Validated inputs cannot fail the square root.
    fidelity_of_matrices(rho.matrix(), sigma.matrix()).unwrap_or(0.0)
}

/// Fidelity on raw Hermitian matrices; rejects non-PSD arguments.
pub fn fidelity_of_matrices(rho: &Matrix4c, sigma: &Matrix4c) -> Result<f64, QuantumError> {
    let root = sqrt_psd(rho)?;
    let (sigma_values, _) = hermitian_eigen(sigma);
    if sigma_values[0] < -PSD_TOL {
        return Err(QuantumError::NotPositive {
            min_eigenvalue: sigma_values[0],
        });
    }
    let inner = root * sigma * root;
    let (values, _) = hermitian_eigen(&inner);
    let tr: f64 = values.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok((tr * tr).clamp(0.0, 1.0))
}

/// `Tr(ρ²)`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    let m = rho.matrix();
    // Tr(ρ²) = Σ |ρ_rc|² for Hermitian ρ
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Wootters concurrence from the spin-flipped spectrum.
pub fn concurrence(rho: &DensityMatrix) -> f64 {
    let m = rho.matrix();
    let yy = pauli_pair(2, 2);
    let flipped = yy * m.conjugate() * yy;
    let root = match sqrt_psd(m) {
        Ok(r) => r,
        Err(_) => return 0.0,
    };
    let (values, _) = hermitian_eigen(&(root * flipped * root));
    let mut lambdas = values.map(|v| v.max(0.0).sqrt());
    lambdas.sort_by(|a, b| b.total_cmp(a));
    (lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).max(0.0)
}

/// Random state generators for simulations and tests.
pub mod random {
    use super::*;

    fn gaussian_complex<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
        c(rng.sample(StandardNormal), rng.sample(StandardNormal))
    }

    /// Haar-random pure state.
    pub fn pure_state<R: Rng + ?Sized>(rng: &mut R) -> PureState2Q {
        loop {
            let amps = std::array::from_fn(|_| gaussian_complex(rng));
            if let Ok(psi) = PureState2Q::normalized(amps) {
                return psi;
            }
        }
    }

    /// Random mixed state `G G† / Tr(G G†)` from a 4×`rank` Ginibre matrix.
    pub fn density_matrix<R: Rng + ?Sized>(rng: &mut R, rank: usize) -> DensityMatrix {
        let rank = rank.clamp(1, 4);
        let mut m = Matrix4c::zeros();
        for _ in 0..rank {
            let v = Vector4::from_fn(|_, _| gaussian_complex(rng));
            m += v * v.adjoint();
        }
        let tr = m.trace().re;
        let m = symmetrize(&m.unscale(tr));
        DensityMatrix::new(m).expect("Ginibre construction is a valid state")
    }

    /// Random state with rank drawn uniformly from 1..=4.
    pub fn any_density_matrix<R: Rng + ?Sized>(rng: &mut R) -> DensityMatrix {
        let rank = rng.random_range(1..=4);
        density_matrix(rng, rank)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_stokes(s: &StokesVector2Q, expected: &[((usize, usize), f64)]) {
        for i in 0..4 {
            for j in 0..4 {
                let want = expected
                    .iter()
                    .find(|(ij, _)| *ij == (i, j))
                    .map(|(_, v)| *v)
                    .unwrap_or(0.0);
                assert!(
                    (s.get(i, j) - want).abs() < 1e-12,
                    "S_{i}{j} = {} want {want}",
                    s.get(i, j)
                );
            }
        }
    }

    /// Brute-force trace oracle: builds σ_i ⊗ σ_j entry by entry without `kron`.
    fn oracle_stokes(m: &Matrix4c, i: usize, j: usize) -> f64 {
        let (a, b) = (pauli(i), pauli(j));
        let mut tr = c(0.0, 0.0);
        for r in 0..4 {
            for k in 0..4 {
                let p = a[(k / 2, r / 2)] * b[(k % 2, r % 2)];
                tr += m[(r, k)] * p;
            }
        }
        tr.re
    }

    #[test]
    fn pure_basis_projectors() {
        let hh = density_from_pure(&PureState2Q::hh());
        let hv = density_from_pure(&PureState2Q::hv());
        for r in 0..4 {
            for col in 0..4 {
                let want_hh = if r == 0 && col == 0 { 1.0 } else { 0.0 };
                let want_hv = if r == 1 && col == 1 { 1.0 } else { 0.0 };
                assert_eq!(hh.matrix()[(r, col)], c(want_hh, 0.0));
                assert_eq!(hv.matrix()[(r, col)], c(want_hv, 0.0));
            }
        }
        let phi = density_from_pure(&PureState2Q::phi_plus());
        for r in 0..4 {
            for col in 0..4 {
                let corner = (r == 0 || r == 3) && (col == 0 || col == 3);
                let want = if corner { 0.5 } else { 0.0 };
                assert!((phi.matrix()[(r, col)] - c(want, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn unnormalized_pure_state_rejected() {
        let err = PureState2Q::new([c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert!(matches!(err, Err(QuantumError::NotNormalized { .. })));
    }

    #[test]
    fn stokes_of_known_states() {
        assert_stokes(&DensityMatrix::maximally_mixed().stokes(), &[((0, 0), 1.0)]);

        let phi = density_from_pure(&PureState2Q::phi_plus());
        for i in 0..4 {
            for j in 0..4 {
                assert!((phi.stokes().get(i, j) - oracle_stokes(phi.matrix(), i, j)).abs() < 1e-14);
            }
        }
        assert_stokes(
            &phi.stokes(),
            &[((0, 0), 1.0), ((1, 1), 1.0), ((2, 2), -1.0), ((3, 3), 1.0)],
        );

        let hh = density_from_pure(&PureState2Q::hh());
        assert_stokes(
            &hh.stokes(),
            &[((0, 0), 1.0), ((0, 3), 1.0), ((3, 0), 1.0), ((3, 3), 1.0)],
        );
    }

    #[test]
    fn stokes_inverse_of_identity_component() {
        let mut s = [0.0; 16];
        s[0] = 1.0;
        let m = density_from_stokes(&StokesVector2Q(s));
        assert!((m - Matrix4c::identity().scale(0.25)).norm() < 1e-15);
    }

    #[test]
    fn over_polarized_stokes_is_not_positive() {
        let mut s = [0.0; 16];
        s[0] = 1.0;
        s[15] = 1.2;
        let m = density_from_stokes(&StokesVector2Q(s));
        assert!(hermitian_deviation(&m) < 1e-15);
        let (values, _) = hermitian_eigen(&m);
        let want = [-0.05, -0.05, 0.55, 0.55];
        for (v, w) in values.iter().zip(want) {
            assert!((v - w).abs() < 1e-12);
        }
        assert!(matches!(
            DensityMatrix::new(m),
            Err(QuantumError::NotPositive { .. })
        ));
    }

    #[test]
    fn fidelity_examples() {
        let hh = density_from_pure(&PureState2Q::hh());
        let phi = density_from_pure(&PureState2Q::phi_plus());
        let mixed = DensityMatrix::maximally_mixed();
        assert!((fidelity(&phi, &phi) - 1.0).abs() < 1e-9);
        assert!((fidelity(&mixed, &mixed) - 1.0).abs() < 1e-9);
        assert!((fidelity(&hh, &phi) - 0.5).abs() < 1e-9);
        assert!((fidelity(&mixed, &phi) - 0.25).abs() < 1e-9);
    }

    #[test]
    fn fidelity_rejects_non_psd_matrix() {
        let mut s = [0.0; 16];
        s[0] = 1.0;
        s[15] = 1.2;
        let bad = density_from_stokes(&StokesVector2Q(s));
        let good = DensityMatrix::maximally_mixed();
        assert!(fidelity_of_matrices(&bad, good.matrix()).is_err());
    }

    #[test]
    fn purity_examples() {
        assert!((DensityMatrix::maximally_mixed().purity() - 0.25).abs() < 1e-15);
        assert!((density_from_pure(&PureState2Q::psi_minus()).purity() - 1.0).abs() < 1e-15);
        // 0.75|φ⁺⟩⟨φ⁺| + 0.25·I/4, checked against Tr(ρ·ρ) by explicit product
        let werner = density_from_pure(&PureState2Q::phi_plus()).depolarize(0.25);
        let m = werner.matrix();
        let direct = (m * m).trace().re;
        assert!((direct - 0.671875).abs() < 1e-12);
        assert!((werner.purity() - direct).abs() < 1e-12);
    }

    #[test]
    fn concurrence_examples() {
        assert!(density_from_pure(&PureState2Q::hh()).concurrence() < 1e-7);
        assert!((density_from_pure(&PureState2Q::phi_plus()).concurrence() - 1.0).abs() < 1e-7);
        assert!(DensityMatrix::maximally_mixed().concurrence() < 1e-12);
        // Werner state: C = max(0, (3F - 1)/2) with F = 1 - 3p/4
        let p = 0.2;
        let werner = density_from_pure(&PureState2Q::phi_plus()).depolarize(p);
        assert!((werner.concurrence() - 0.7).abs() < 1e-9);
    }

    #[test]
    fn flat_serialization_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = random::density_matrix(&mut rng, 3);
        let back = DensityMatrix::from_flat(&rho.to_flat()).unwrap();
        assert_eq!(rho, back);
        assert!(DensityMatrix::from_flat(&[0.0; 31]).is_err());
    }

    #[test]
    fn random_states_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let rho = random::any_density_matrix(&mut rng);
            assert!(DensityMatrix::new(*rho.matrix()).is_ok());
            let psi = random::pure_state(&mut rng);
            assert!((psi.amplitudes().norm() - 1.0).abs() < 1e-12);
        }
    }
}
