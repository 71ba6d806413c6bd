//! Analyzer settings, the linear measurement model and coincidence-count
//! simulation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::{c, stokes_of_matrix, DensityMatrix, Matrix4c, PureState2Q};
use crate::rng::{seeded_rng, split_seed, streams};

/// Default counting time per setting, seconds.
pub const DEFAULT_DWELL: f64 = 0.08;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasurementError {
    #[error("unsupported number of settings {0}; expected 9 or 36")]
    UnsupportedSettingCount(usize),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("setting id {0} appears more than once")]
    DuplicateSetting(usize),
    #[error("no settings supplied")]
    Empty,
}

/// One of the six canonical single-photon polarization states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl Polarization {
    pub const ALL: [Polarization; 6] = [Self::H, Self::V, Self::D, Self::A, Self::R, Self::L];

    pub fn ket(self) -> [Complex64; 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Self::H => [c(1.0, 0.0), c(0.0, 0.0)],
            Self::V => [c(0.0, 0.0), c(1.0, 0.0)],
            Self::D => [c(s, 0.0), c(s, 0.0)],
            Self::A => [c(s, 0.0), c(-s, 0.0)],
            Self::R => [c(s, 0.0), c(0.0, s)],
            Self::L => [c(s, 0.0), c(0.0, -s)],
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Self::H => 'H',
            Self::V => 'V',
            Self::D => 'D',
            Self::A => 'A',
            Self::R => 'R',
            Self::L => 'L',
        }
    }
}

/// A two-outcome single-qubit analyzer basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    #[serde(rename = "HV")]
    Hv,
    #[serde(rename = "DA")]
    Da,
    #[serde(rename = "RL")]
    Rl,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Self::Hv, Self::Da, Self::Rl];

    pub fn outcomes(self) -> [Polarization; 2] {
        match self {
            Self::Hv => [Polarization::H, Polarization::V],
            Self::Da => [Polarization::D, Polarization::A],
            Self::Rl => [Polarization::R, Polarization::L],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Hv => "HV",
            Self::Da => "DA",
            Self::Rl => "RL",
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Basis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "HV" => Ok(Self::Hv),
            "DA" => Ok(Self::Da),
            "RL" => Ok(Self::Rl),
            other => Err(format!("unknown basis label {other:?}")),
        }
    }
}

/// Bloch vector of a single-qubit ket.
pub fn bloch_vector(ket: &[Complex64; 2]) -> [f64; 3] {
    let norm = ket[0].norm_sqr() + ket[1].norm_sqr();
    let cross = ket[0].conj() * ket[1];
    [
        2.0 * cross.re / norm,
        2.0 * cross.im / norm,
        (ket[0].norm_sqr() - ket[1].norm_sqr()) / norm,
    ]
}

/// Great-circle angle between two kets on the Poincaré sphere, degrees.
pub fn poincare_angle_deg(a: &[Complex64; 2], b: &[Complex64; 2]) -> f64 {
    let (u, v) = (bloch_vector(a), bloch_vector(b));
    let dot = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]).clamp(-1.0, 1.0);
    dot.acos().to_degrees()
}

/// One four-detector analyzer configuration: a single-qubit basis on each
/// arm, giving four two-qubit projectors ordered `(a0 b0, a0 b1, a1 b0, a1 b1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSetting {
    pub id: usize,
    pub bases: [Basis; 2],
    /// `kets[qubit][outcome]`; differs from the canonical kets only when
    /// the setting has been perturbed.
    kets: [[[Complex64; 2]; 2]; 2],
    projectors: [PureState2Q; 4],
    pub dwell: f64,
}

impl MeasurementSetting {
    pub fn new(id: usize, bases: [Basis; 2], dwell: f64) -> Self {
        let kets = bases.map(|b| b.outcomes().map(Polarization::ket));
        Self::from_kets(id, bases, kets, dwell)
    }

    fn from_kets(id: usize, bases: [Basis; 2], kets: [[[Complex64; 2]; 2]; 2], dwell: f64) -> Self {
        let projectors = std::array::from_fn(|r| {
            PureState2Q::product(kets[0][r / 2], kets[1][r % 2])
                .expect("analyzer kets are normalized")
        });
        Self {
            id,
            bases,
            kets,
            projectors,
            dwell,
        }
    }

    pub fn projectors(&self) -> &[PureState2Q; 4] {
        &self.projectors
    }

    pub fn kets(&self) -> &[[[Complex64; 2]; 2]; 2] {
        &self.kets
    }

    /// Nominal outcome labels such as `"HH"`, `"HV"`, `"VH"`, `"VV"`.
    pub fn outcome_labels(&self) -> [String; 4] {
        let [a, b] = self.bases.map(Basis::outcomes);
        std::array::from_fn(|r| format!("{}{}", a[r / 2].symbol(), b[r % 2].symbol()))
    }

    /// `G_rs = ⟨Π_r|Π_s⟩`.
    pub fn gram(&self) -> Matrix4c {
        Matrix4c::from_fn(|r, s| {
            (self.projectors[r].amplitudes().adjoint() * self.projectors[s].amplitudes())[(0, 0)]
        })
    }

    /// Born probabilities `⟨Π_r|ρ|Π_r⟩`.
    pub fn probabilities(&self, rho: &DensityMatrix) -> [f64; 4] {
        self.projectors.map(|p| p.expectation(rho.matrix()))
    }

    pub fn with_dwell(mut self, dwell: f64) -> Self {
        self.dwell = dwell;
        self
    }
}

/// Canonical analyzer schedule.
///
/// `m = 9`: the basis pairs `{HV, DA, RL}²` with the first arm's basis in
/// the outer loop, so setting 0 is `HV/HV` (`HH, HV, VH, VV`).
/// `m = 36`: the same nine settings visited four times in order; setting
/// `k` uses the basis pair of setting `k mod 9`.
pub fn canonical_settings(m: usize) -> Result<Vec<MeasurementSetting>, MeasurementError> {
    if m != 9 && m != 36 {
        return Err(MeasurementError::UnsupportedSettingCount(m));
    }
    let pairs: Vec<[Basis; 2]> = Basis::ALL
        .iter()
        .flat_map(|&a| Basis::ALL.iter().map(move |&b| [a, b]))
        .collect();
    Ok((0..m)
        .map(|k| MeasurementSetting::new(k, pairs[k % 9], DEFAULT_DWELL))
        .collect())
}

/// One 16-real row per projector, scaled so that `row · S = Tr(ρ Π_r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    rows: Vec<[f64; 16]>,
    row_setting: Vec<usize>,
    first_row: BTreeMap<usize, usize>,
}

impl MeasurementMatrix {
    pub fn rows(&self) -> &[[f64; 16]] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn setting_of_row(&self, row: usize) -> usize {
        self.row_setting[row]
    }

    /// The four rows of one setting.
    pub fn rows_for(&self, setting_id: usize) -> Option<&[[f64; 16]]> {
        self.first_row
            .get(&setting_id)
            .map(|&start| &self.rows[start..start + 4])
    }

    pub fn setting_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.first_row.keys().copied()
    }

    /// Predicted probabilities for every row.
    pub fn predict(&self, rho: &DensityMatrix) -> Vec<f64> {
        let s = rho.stokes();
        self.rows
            .iter()
            .map(|row| row.iter().zip(s.as_slice()).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Numerical rank of the stacked rows.
    pub fn rank(&self) -> usize {
        let n = self.rows.len();
        let a = nalgebra::DMatrix::from_fn(n, 16, |r, k| self.rows[r][k]);
        let sv = a.singular_values();
        let max = sv.max();
        sv.iter().filter(|&&s| s > 1e-10 * max.max(1e-300)).count()
    }
}

/// Stokes row of a projector: `stokes(|π⟩⟨π|) / 4`.
pub fn stokes_row(projector: &PureState2Q) -> [f64; 16] {
    let s = stokes_of_matrix(&projector.projector());
    s.0.map(|v| v * 0.25)
}

pub fn build_measurement_matrix(
    settings: &[MeasurementSetting],
) -> Result<MeasurementMatrix, MeasurementError> {
    if settings.is_empty() {
        return Err(MeasurementError::Empty);
    }
    let mut rows = Vec::with_capacity(4 * settings.len());
    let mut row_setting = Vec::with_capacity(4 * settings.len());
    let mut first_row = BTreeMap::new();
    for setting in settings {
        if first_row.insert(setting.id, rows.len()).is_some() {
            return Err(MeasurementError::DuplicateSetting(setting.id));
        }
        for p in setting.projectors() {
            rows.push(stokes_row(p));
            row_setting.push(setting.id);
        }
    }
    Ok(MeasurementMatrix {
        rows,
        row_setting,
        first_row,
    })
}

/// SU(2) rotation by `angle` (radians on the Poincaré sphere) about unit
/// axis `n`: `cos(θ/2) I - i sin(θ/2) n·σ`.
fn su2_rotation(axis: [f64; 3], angle: f64) -> [[Complex64; 2]; 2] {
    let (s, co) = ((angle / 2.0).sin(), (angle / 2.0).cos());
    let [x, y, z] = axis;
    [
        [c(co, -s * z), c(-s * y, -s * x)],
        [c(s * y, -s * x), c(co, s * z)],
    ]
}

fn apply(u: &[[Complex64; 2]; 2], ket: &[Complex64; 2]) -> [Complex64; 2] {
    [
        u[0][0] * ket[0] + u[0][1] * ket[1],
        u[1][0] * ket[0] + u[1][1] * ket[1],
    ]
}

/// Random unit vector orthogonal to `n`.
fn random_orthogonal_axis<R: Rng + ?Sized>(rng: &mut R, n: [f64; 3]) -> [f64; 3] {
    loop {
        let g: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let dot = g[0] * n[0] + g[1] * n[1] + g[2] * n[2];
        let v = [g[0] - dot * n[0], g[1] - dot * n[1], g[2] - dot * n[2]];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-6 {
            return v.map(|x| x / norm);
        }
    }
}

/// Systematic analyzer error: each arm's analyzer basis in each setting is
/// rotated by `angle_deg` about a random axis orthogonal to its Bloch
/// vector, so every single-qubit projector moves exactly `angle_deg` on the
/// Poincaré sphere while each basis stays orthonormal.
pub fn perturb_projectors(
    settings: &[MeasurementSetting],
    angle_deg: f64,
    seed: u64,
) -> Vec<MeasurementSetting> {
    if angle_deg == 0.0 {
        return settings.to_vec();
    }
    let mut rng = seeded_rng(split_seed(seed, streams::PERTURBATION));
    let angle = angle_deg.to_radians();
    settings
        .iter()
        .map(|s| {
            let kets = std::array::from_fn(|q| {
                let axis = random_orthogonal_axis(&mut rng, bloch_vector(&s.kets[q][0]));
                let u = su2_rotation(axis, angle);
                [apply(&u, &s.kets[q][0]), apply(&u, &s.kets[q][1])]
            });
            MeasurementSetting::from_kets(s.id, s.bases, kets, s.dwell)
        })
        .collect()
}

/// Accepts a number, `null` or the string `"inf"`; JSON has no infinity and
/// writes it as `null`.
pub fn deserialize_car<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Car {
        Num(f64),
        Text(String),
    }
    match Option::<Car>::deserialize(d)? {
        None => Ok(f64::INFINITY),
        Some(Car::Num(v)) => Ok(v),
        Some(Car::Text(t)) if matches!(t.as_str(), "inf" | "infinity") => Ok(f64::INFINITY),
        Some(Car::Text(t)) => Err(serde::de::Error::custom(format!(
            "car must be a number or \"inf\", got {t:?}"
        ))),
    }
}

/// Source and detection noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Pair production rate `R`, pairs/s.
    pub pair_rate: f64,
    /// Coincidence-to-accidental ratio; `inf` disables accidentals.
    #[serde(deserialize_with = "deserialize_car")]
    pub car: f64,
    /// Dark-count probability per gate per detector.
    pub dark_rate: f64,
    /// Detector gates per second.
    pub gate_rate: f64,
    /// Per-arm transmission `η`.
    pub eta: f64,
    /// Analyzer misalignment on the Poincaré sphere, degrees.
    pub systematic_angle: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            pair_rate: 1e6,
            car: 3.0,
            dark_rate: 2e-4,
            gate_rate: 50e6,
            eta: 0.07,
            systematic_angle: 0.0,
        }
    }
}

impl NoiseModel {
    /// Only Poissonian signal: no accidentals, darks or misalignment.
    pub fn ideal(pair_rate: f64, eta: f64) -> Self {
        Self {
            pair_rate,
            car: f64::INFINITY,
            dark_rate: 0.0,
            gate_rate: 0.0,
            eta,
            systematic_angle: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        let bad = |what: &str| Err(MeasurementError::InvalidNoise(what.to_string()));
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.pair_rate) {
            return bad("pair_rate must be finite and >= 0");
        }
        if self.car.is_nan() || self.car <= 0.0 {
            return bad("car must be > 0");
        }
        if !nonneg(self.dark_rate) || self.dark_rate > 1.0 {
            return bad("dark_rate must be in [0, 1]");
        }
        if !nonneg(self.gate_rate) {
            return bad("gate_rate must be finite and >= 0");
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta must be in (0, 1]");
        }
        if !nonneg(self.systematic_angle) || self.systematic_angle > 180.0 {
            return bad("systematic_angle must be in [0, 180] degrees");
        }
        Ok(())
    }

    /// Detected pairs per second, `R η²`.
    pub fn detected_pair_rate(&self) -> f64 {
        self.pair_rate * self.eta * self.eta
    }
}

/// Mean counts per outcome, split by origin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExpectedCounts {
    pub signal: [f64; 4],
    pub accidental: [f64; 4],
    pub dark: [f64; 4],
}

impl ExpectedCounts {
    pub fn total(&self) -> [f64; 4] {
        std::array::from_fn(|r| self.signal[r] + self.accidental[r] + self.dark[r])
    }

    /// Accidental plus dark means.
    pub fn background(&self) -> [f64; 4] {
        std::array::from_fn(|r| self.accidental[r] + self.dark[r])
    }
}

/// Mean counts for one setting over its dwell.
///
/// Signal is `R η² τ ⟨Π_r|ρ|Π_r⟩`. Accidentals are an unpolarized
/// background of total `signal/CAR` shared equally by the four outcomes.
/// Dark coincidences need both detectors of an outcome to fire in the same
/// gate: `dark_rate² · gate_rate · τ` per outcome.
pub fn expected_counts(
    rho: &DensityMatrix,
    setting: &MeasurementSetting,
    noise: &NoiseModel,
) -> ExpectedCounts {
    let pairs = noise.detected_pair_rate() * setting.dwell;
    let probs = setting.probabilities(rho);
    let signal = probs.map(|p| pairs * p.max(0.0));
    let total_signal: f64 = signal.iter().sum();
    let acc = if noise.car.is_infinite() {
        0.0
    } else {
        total_signal / noise.car / 4.0
    };
    let dark = noise.dark_rate * noise.dark_rate * noise.gate_rate * setting.dwell;
    ExpectedCounts {
        signal,
        accidental: [acc; 4],
        dark: [dark; 4],
    }
}

/// Coincidence counts of one setting over one dwell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub setting_id: usize,
    pub counts: [u64; 4],
    /// Mean accidental + dark counts per outcome.
    pub expected_accidentals: [f64; 4],
    pub dwell: f64,
    pub timestamp: f64,
}

impl CountRecord {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn poisson_sample<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 || !mean.is_finite() {
        return 0;
    }
    let draw: f64 = Poisson::new(mean)
        .expect("positive finite Poisson mean")
        .sample(rng);
    draw as u64
}

/// Draws the four counts independently from Poisson distributions with the
/// [`expected_counts`] totals as means.
pub fn simulate_counts_with<R: Rng + ?Sized>(
    rng: &mut R,
    rho: &DensityMatrix,
    setting: &MeasurementSetting,
    noise: &NoiseModel,
    timestamp: f64,
) -> CountRecord {
    let expected = expected_counts(rho, setting, noise);
    let means = expected.total();
    CountRecord {
        setting_id: setting.id,
        counts: means.map(|m| poisson_sample(rng, m)),
        expected_accidentals: expected.background(),
        dwell: setting.dwell,
        timestamp,
    }
}

pub fn simulate_counts(
    rho: &DensityMatrix,
    setting: &MeasurementSetting,
    noise: &NoiseModel,
    seed: u64,
) -> CountRecord {
    let mut rng = seeded_rng(split_seed(seed, streams::COUNTS));
    simulate_counts_with(&mut rng, rho, setting, noise, 0.0)
}

/// Noiseless records: counts set to the rounded expected signal for each
/// setting (or exact when the means are integral).
pub fn expected_records(
    rho: &DensityMatrix,
    settings: &[MeasurementSetting],
    noise: &NoiseModel,
) -> Vec<CountRecord> {
    settings
        .iter()
        .map(|s| {
            let e = expected_counts(rho, s, noise);
            CountRecord {
                setting_id: s.id,
                counts: e.total().map(|m| m.round() as u64),
                expected_accidentals: e.background(),
                dwell: s.dwell,
                timestamp: 0.0,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{density_from_pure, random, DensityMatrix, PureState2Q};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn canonical_kets_match_definitions() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(Polarization::D.ket(), [c(s, 0.0), c(s, 0.0)]);
        assert_eq!(Polarization::A.ket(), [c(s, 0.0), c(-s, 0.0)]);
        assert_eq!(Polarization::R.ket(), [c(s, 0.0), c(0.0, s)]);
        assert_eq!(Polarization::L.ket(), [c(s, 0.0), c(0.0, -s)]);
        for p in Polarization::ALL {
            let k = p.ket();
            assert!((k[0].norm_sqr() + k[1].norm_sqr() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn nine_settings_are_orthonormal_and_complete() {
        let settings = canonical_settings(9).unwrap();
        assert_eq!(settings.len(), 9);
        assert_eq!(settings[0].outcome_labels(), ["HH", "HV", "VH", "VV"]);
        let mut labels = std::collections::BTreeSet::new();
        for s in &settings {
            assert!((s.gram() - Matrix4c::identity()).norm() < 1e-12);
            for l in s.outcome_labels() {
                labels.insert(l);
            }
        }
        assert_eq!(labels.len(), 36);
    }

    #[test]
    fn thirty_six_settings_regroup_the_same_projectors() {
        let nine = canonical_settings(9).unwrap();
        let many = canonical_settings(36).unwrap();
        assert_eq!(many.len(), 36);
        let set = |v: &[MeasurementSetting]| {
            v.iter()
                .flat_map(|s| s.outcome_labels())
                .collect::<std::collections::BTreeSet<_>>()
        };
        assert_eq!(set(&nine), set(&many));
        for (k, s) in many.iter().enumerate() {
            assert_eq!(s.bases, nine[k % 9].bases);
            assert_eq!(s.id, k);
        }
    }

    #[test]
    fn other_setting_counts_rejected() {
        for m in [0, 8, 10, 35, 37] {
            assert_eq!(
                canonical_settings(m),
                Err(MeasurementError::UnsupportedSettingCount(m))
            );
        }
    }

    #[test]
    fn matrix_reproduces_born_rule() {
        let settings = canonical_settings(9).unwrap();
        let matrix = build_measurement_matrix(&settings).unwrap();
        assert_eq!(matrix.row_count(), 36);
        assert_eq!(matrix.rank(), 16);

        let phi = density_from_pure(&PureState2Q::phi_plus());
        let p = matrix.predict(&phi);
        assert!((p[0] - 0.5).abs() < 1e-12); // HH
        assert!(p[1].abs() < 1e-12); // HV
        // DD row: setting DA/DA is index 4, outcome 0; |⟨DD|φ⁺⟩|² evaluated directly
        let dd = PureState2Q::product(Polarization::D.ket(), Polarization::D.ket()).unwrap();
        let direct = dd.expectation(phi.matrix());
        assert!((direct - 0.5).abs() < 1e-12);
        assert_eq!(settings[4].outcome_labels()[0], "DD");
        assert!((p[16] - direct).abs() < 1e-12);

        let mixed = DensityMatrix::maximally_mixed();
        assert!(matrix.predict(&mixed).iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn rows_match_born_rule_for_random_states() {
        let settings = canonical_settings(9).unwrap();
        let matrix = build_measurement_matrix(&settings).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let rho = random::any_density_matrix(&mut rng);
            let pred = matrix.predict(&rho);
            for (s, setting) in settings.iter().enumerate() {
                let born = setting.probabilities(&rho);
                let sum: f64 = born.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                for r in 0..4 {
                    assert!((pred[4 * s + r] - born[r]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn duplicate_setting_ids_rejected() {
        let mut settings = canonical_settings(9).unwrap();
        settings[1].id = 0;
        assert_eq!(
            build_measurement_matrix(&settings),
            Err(MeasurementError::DuplicateSetting(0))
        );
        assert_eq!(build_measurement_matrix(&[]), Err(MeasurementError::Empty));
    }

    fn mean_deviation(a: &[MeasurementSetting], b: &[MeasurementSetting]) -> f64 {
        let mut total = 0.0;
        let mut n = 0;
        for (x, y) in a.iter().zip(b) {
            for q in 0..2 {
                for o in 0..2 {
                    total += poincare_angle_deg(&x.kets()[q][o], &y.kets()[q][o]);
                    n += 1;
                }
            }
        }
        total / n as f64
    }

    #[test]
    fn perturbation_examples() {
        let settings = canonical_settings(9).unwrap();
        assert_eq!(perturb_projectors(&settings, 0.0, 1), settings);

        let tilted = perturb_projectors(&settings, 2.1, 99);
        let dev = mean_deviation(&settings, &tilted);
        assert!((dev - 2.1).abs() <= 0.3, "mean deviation {dev}");
        assert_eq!(tilted, perturb_projectors(&settings, 2.1, 99));
        for s in &tilted {
            assert!((s.gram() - Matrix4c::identity()).norm() < 1e-12);
        }

        let flipped = perturb_projectors(&settings, 180.0, 5);
        for (x, y) in settings.iter().zip(&flipped) {
            for q in 0..2 {
                for o in 0..2 {
                    let (a, b) = (x.kets()[q][o], y.kets()[q][o]);
                    let overlap = (a[0].conj() * b[0] + a[1].conj() * b[1]).norm();
                    assert!(overlap < 1e-12);
                }
            }
        }
    }

    #[test]
    fn perturbation_changes_probabilities_boundedly() {
        let settings = canonical_settings(9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for eps in [0.5f64, 2.1, 10.0, 45.0] {
            let tilted = perturb_projectors(&settings, eps, 4);
            // each arm moves a projector by at most sin(ε/2) in operator norm
            let bound = 2.0 * (eps.to_radians() / 2.0).sin() + 1e-9;
            for _ in 0..50 {
                let rho = random::any_density_matrix(&mut rng);
                for (a, b) in settings.iter().zip(&tilted) {
                    let (pa, pb) = (a.probabilities(&rho), b.probabilities(&rho));
                    for r in 0..4 {
                        assert!((pa[r] - pb[r]).abs() <= bound);
                    }
                }
            }
        }
    }

    #[test]
    fn expected_counts_examples() {
        let phi = density_from_pure(&PureState2Q::phi_plus());
        // R η² τ = 80 pairs
        let setting = canonical_settings(9).unwrap()[0].clone().with_dwell(0.08);
        let mut noise = NoiseModel::ideal(1000.0, 1.0);
        let e = expected_counts(&phi, &setting, &noise);
        let t = e.total();
        for (got, want) in t.iter().zip([40.0, 0.0, 0.0, 40.0]) {
            assert!((got - want).abs() < 1e-12);
        }

        noise.car = 3.0;
        let e = expected_counts(&phi, &setting, &noise);
        for r in 0..4 {
            assert!((e.accidental[r] - 80.0 / 3.0 / 4.0).abs() < 1e-12);
        }
        let acc: f64 = e.accidental.iter().sum();
        let sig: f64 = e.signal.iter().sum();
        assert!((acc / sig - 1.0 / 3.0).abs() < 1e-12);

        let idle = setting.clone().with_dwell(0.0);
        let e = expected_counts(&phi, &idle, &NoiseModel::default());
        assert!(e.total().iter().all(|&v| v == 0.0));
    }

    /// Brute-force accidental model: photons from two different pairs are
    /// uncorrelated, so an accidental coincidence measures the product of
    /// the two single-arm marginals. For |φ⁺⟩ both marginals are I/2 and
    /// the accidentals spread evenly over the four outcomes.
    #[test]
    fn accidentals_agree_with_two_pulse_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let phi = density_from_pure(&PureState2Q::phi_plus());
        let setting = &canonical_settings(9).unwrap()[0];
        let probs = setting.probabilities(&phi);
        let mut hist = [0u64; 4];
        let trials = 200_000;
        for _ in 0..trials {
            // photon 1 from one pair, photon 2 from another
            let pick = |rng: &mut ChaCha8Rng| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (r, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return r;
                    }
                }
                3
            };
            let a = pick(&mut rng) / 2;
            let b = pick(&mut rng) % 2;
            hist[2 * a + b] += 1;
        }
        for h in hist {
            let frac = h as f64 / trials as f64;
            assert!((frac - 0.25).abs() < 0.005, "fraction {frac}");
        }
    }

    #[test]
    fn simulate_counts_zero_mean() {
        let rho = density_from_pure(&PureState2Q::hh());
        let setting = canonical_settings(9).unwrap()[0].clone().with_dwell(0.0);
        let rec = simulate_counts(&rho, &setting, &NoiseModel::default(), 1);
        assert_eq!(rec.counts, [0, 0, 0, 0]);
    }

    #[test]
    fn simulate_counts_is_replayable() {
        let rho = density_from_pure(&PureState2Q::phi_plus());
        let setting = &canonical_settings(9).unwrap()[3];
        let a = simulate_counts(&rho, setting, &NoiseModel::default(), 77);
        let b = simulate_counts(&rho, setting, &NoiseModel::default(), 77);
        assert_eq!(a, b);
    }

    #[test]
    fn poisson_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let trials = 10_000;
        let draws: Vec<f64> = (0..trials)
            .map(|_| poisson_sample(&mut rng, 1000.0) as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / trials as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let sigma = 1000f64.sqrt();
        assert!((mean - 1000.0).abs() <= 4.0 * sigma / (trials as f64).sqrt());
        assert!((0.95..=1.05).contains(&(var / mean)));
    }

    #[test]
    fn noise_validation() {
        assert!(NoiseModel::default().validate().is_ok());
        assert!(NoiseModel::ideal(1.0, 1.0).validate().is_ok());
        let mut n = NoiseModel::default();
        n.car = 0.0;
        assert!(n.validate().is_err());
        let mut n = NoiseModel::default();
        n.eta = 0.0;
        assert!(n.validate().is_err());
        let mut n = NoiseModel::default();
        n.pair_rate = -1.0;
        assert!(n.validate().is_err());
    }
}
