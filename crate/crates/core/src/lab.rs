//! Tomography-time algebra and Monte Carlo precision studies.
//!
//! Total time for one tomography is `T = M (τ_m + τ_s) + τ_a`; all
//! non-overhead time counts pairs, so the ensemble is
//! `N = R η² M τ_m = R η² (T − M τ_s − τ_a)`.
//!
//! A precision point runs `trials` independent simulate → reconstruct
//! cycles with `N` detected pairs split evenly over the settings and
//! reports the mean and sample standard deviation of `F(ρ̂, ρ_ideal)`.
//! Trial `k` at ensemble size `N` draws from
//! `split_seed(split_seed(split_seed(seed, TRIALS), N.to_bits()), k)`, so
//! points are independent of evaluation order and of each other.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measurement::{
    build_measurement_matrix, canonical_settings, perturb_projectors, simulate_counts_with,
    CountRecord, MeasurementError, NoiseModel,
};
use crate::quantum::{fidelity, DensityMatrix};
use crate::reconstruction::{reconstruct, LlsOptions, Method, MlOptions};
use crate::rng::{seeded_rng, split_seed, streams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("T = {t} s is infeasible: overhead M·τ_s + τ_a = {overhead} s")]
    Infeasible { t: f64, overhead: f64 },
    #[error("invalid timing profile: {0}")]
    InvalidProfile(String),
    #[error("ensemble sizes must be finite and > 0, got {0}")]
    InvalidEnsemble(f64),
    #[error("no ensemble sizes given")]
    NoEnsembleSizes,
    #[error("trials must be >= 1")]
    NoTrials,
    #[error("noise model detects no pairs (R η² = 0)")]
    NoPairs,
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
}

/// Timing and rate parameters of one tomography system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingProfile {
    pub name: String,
    /// Settings per tomography, `M`.
    pub m: usize,
    /// Counting time per setting, s.
    pub tau_m: f64,
    /// Switching time per setting, s.
    pub tau_s: f64,
    /// Analysis time per tomography, s.
    pub tau_a: f64,
    /// Pair production rate `R`, pairs/s.
    pub pair_rate: f64,
    /// Per-arm efficiency `η`.
    pub eta: f64,
}

impl Default for TimingProfile {
    fn default() -> Self {
        Self::polarimeter()
    }
}

impl TimingProfile {
    /// Bulk-optics tomography with motorized wave plates and offline
    /// maximum-likelihood analysis.
    pub fn freespace() -> Self {
        Self {
            name: "freespace".into(),
            m: 9,
            tau_m: 1.0,
            tau_s: 5.0,
            tau_a: 5.0,
            pair_rate: 1e6,
            eta: 0.1,
        }
    }

    /// EOM-switched analyzers with LLS analysis.
    pub fn polarimeter() -> Self {
        Self {
            name: "polarimeter".into(),
            m: 9,
            tau_m: 0.08,
            tau_s: 0.02,
            tau_a: 0.001,
            pair_rate: 1e6,
            eta: 0.07,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "freespace" => Some(Self::freespace()),
            "polarimeter" => Some(Self::polarimeter()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |s: &str| Err(LabError::InvalidProfile(s.to_string()));
        if self.m == 0 {
            return bad("m must be >= 1");
        }
        for (v, what) in [
            (self.tau_m, "tau_m"),
            (self.tau_s, "tau_s"),
            (self.tau_a, "tau_a"),
            (self.pair_rate, "pair_rate"),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{what} must be finite and >= 0"));
            }
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta must be in (0, 1]");
        }
        Ok(())
    }

    /// `M τ_s + τ_a`.
    pub fn overhead(&self) -> f64 {
        self.m as f64 * self.tau_s + self.tau_a
    }

    pub fn detected_pair_rate(&self) -> f64 {
        self.pair_rate * self.eta * self.eta
    }

    /// Noise model with this profile's rate and efficiency.
    pub fn noise(&self, base: &NoiseModel) -> NoiseModel {
        NoiseModel {
            pair_rate: self.pair_rate,
            eta: self.eta,
            ..*base
        }
    }
}

/// `T = M (τ_m + τ_s) + τ_a`.
pub fn tomography_time(profile: &TimingProfile) -> f64 {
    profile.m as f64 * (profile.tau_m + profile.tau_s) + profile.tau_a
}

/// `N = R η² (T − M τ_s − τ_a)`. Rejects `T` below the overhead; exactly at
/// the overhead the ensemble is empty.
pub fn ensemble_size(profile: &TimingProfile, total_time: f64) -> Result<f64, LabError> {
    let overhead = profile.overhead();
    if total_time.is_nan() || total_time < overhead {
        return Err(LabError::Infeasible {
            t: total_time,
            overhead,
        });
    }
    Ok(profile.detected_pair_rate() * (total_time - overhead))
}

/// Inverse of [`ensemble_size`].
pub fn time_for_ensemble(profile: &TimingProfile, n: f64) -> Result<f64, LabError> {
    let rate = profile.detected_pair_rate();
    if rate <= 0.0 {
        return Err(LabError::NoPairs);
    }
    Ok(n / rate + profile.overhead())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPoint {
    pub n: f64,
    pub mean_fidelity: f64,
    /// Sample standard deviation; 0 when only one trial succeeded.
    pub std_fidelity: f64,
    /// Trials that produced a reconstruction.
    pub trials: usize,
    pub estimator: Method,
    /// Trials whose data could not be reconstructed (e.g. a setting with no
    /// counts at tiny `N`).
    #[serde(default, skip_serializing_if = "is_zero")]
    pub failed: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

impl PrecisionPoint {
    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.std_fidelity / (self.trials as f64).sqrt()
        }
    }
}

/// Knobs of a precision study beyond the noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyOptions {
    /// Canonical schedule, 9 or 36 settings.
    pub settings: usize,
    pub lls: LlsOptions,
    pub ml: MlOptions,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            settings: 9,
            lls: LlsOptions::default(),
            ml: MlOptions::default(),
        }
    }
}

/// Precision curve with default study options (9 settings, accidental
/// subtraction on).
pub fn precision_curve(
    rho_ideal: &DensityMatrix,
    n_values: &[f64],
    trials: usize,
    estimator: Method,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Vec<PrecisionPoint>, LabError> {
    precision_curve_with(
        rho_ideal,
        n_values,
        trials,
        estimator,
        noise,
        seed,
        &StudyOptions::default(),
    )
}

pub fn precision_curve_with(
    rho_ideal: &DensityMatrix,
    n_values: &[f64],
    trials: usize,
    estimator: Method,
    noise: &NoiseModel,
    seed: u64,
    options: &StudyOptions,
) -> Result<Vec<PrecisionPoint>, LabError> {
    if n_values.is_empty() {
        return Err(LabError::NoEnsembleSizes);
    }
    if trials == 0 {
        return Err(LabError::NoTrials);
    }
    if let Some(&bad) = n_values.iter().find(|n| !(n.is_finite() && **n > 0.0)) {
        return Err(LabError::InvalidEnsemble(bad));
    }
    noise.validate()?;
    if noise.detected_pair_rate() <= 0.0 {
        return Err(LabError::NoPairs);
    }
    let ideal = canonical_settings(options.settings)?;
    let matrix = build_measurement_matrix(&ideal)?;
    let base = split_seed(seed, streams::TRIALS);

    n_values
        .iter()
        .map(|&n| {
            let dwell = n / (ideal.len() as f64 * noise.detected_pair_rate());
            let settings: Vec<_> = ideal.iter().map(|s| s.clone().with_dwell(dwell)).collect();
            let key = split_seed(base, n.to_bits());
            let outcomes: Vec<Option<f64>> = (0..trials)
                .into_par_iter()
                .map(|k| {
                    let trial_seed = split_seed(key, k as u64);
                    let actual = perturb_projectors(&settings, noise.systematic_angle, trial_seed);
                    let mut rng = seeded_rng(split_seed(trial_seed, streams::COUNTS));
                    let records: Vec<CountRecord> = actual
                        .iter()
                        .map(|s| simulate_counts_with(&mut rng, rho_ideal, s, noise, 0.0))
                        .collect();
                    reconstruct(estimator, &matrix, &records, &options.lls, &options.ml)
                        .ok()
                        .map(|report| fidelity(&report.rho, rho_ideal))
                })
                .collect();
            Ok(summarize(n, estimator, &outcomes))
        })
        .collect()
}

fn summarize(n: f64, estimator: Method, outcomes: &[Option<f64>]) -> PrecisionPoint {
    let values: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let count = values.len();
    let mean = if count == 0 {
        0.0
    } else {
        values.iter().sum::<f64>() / count as f64
    };
    let std = if count < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    };
    PrecisionPoint {
        n,
        mean_fidelity: mean,
        std_fidelity: std,
        trials: count,
        estimator,
        failed: outcomes.len() - count,
    }
}

/// One entry of a precision-vs-time curve. `point` is `None` where `T` is
/// infeasible for the profile or leaves no counting time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub t: f64,
    pub n: Option<f64>,
    pub point: Option<PrecisionPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeCurve {
    pub profile: TimingProfile,
    pub points: Vec<TimePoint>,
}

/// Composes [`ensemble_size`] with [`precision_curve_with`] for each
/// profile. The profile's `M` selects the schedule; its `R` and `η`
/// override those of `noise`.
#[allow(clippy::too_many_arguments)]
pub fn precision_vs_time(
    rho_ideal: &DensityMatrix,
    profiles: &[TimingProfile],
    t_values: &[f64],
    trials: usize,
    estimator: Method,
    noise: &NoiseModel,
    seed: u64,
    options: &StudyOptions,
) -> Result<Vec<TimeCurve>, LabError> {
    profiles
        .iter()
        .enumerate()
        .map(|(i, profile)| {
            profile.validate()?;
            let noise = profile.noise(noise);
            let options = StudyOptions {
                settings: profile.m,
                ..*options
            };
            let seed = split_seed(seed, i as u64);
            let points = t_values
                .iter()
                .map(|&t| {
                    let n = ensemble_size(profile, t).ok();
                    let point = match n {
                        Some(n) if n > 0.0 => Some(
                            precision_curve_with(
                                rho_ideal,
                                &[n],
                                trials,
                                estimator,
                                &noise,
                                seed,
                                &options,
                            )?
                            .remove(0),
                        ),
                        _ => None,
                    };
                    Ok(TimePoint { t, n, point })
                })
                .collect::<Result<Vec<_>, LabError>>()?;
            Ok(TimeCurve {
                profile: profile.clone(),
                points,
            })
        })
        .collect()
}

pub const CURVE_CSV_HEADER: &str = "n,mean_fidelity,std_fidelity,trials,estimator";
pub const TIME_CSV_HEADER: &str = "profile,t,n,mean_fidelity,std_fidelity,trials,estimator";

pub fn curve_to_csv(points: &[PrecisionPoint]) -> String {
    let mut out = format!("{CURVE_CSV_HEADER}\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.n, p.mean_fidelity, p.std_fidelity, p.trials, p.estimator
        );
    }
    out
}

/// Infeasible points are written with empty fields.
pub fn time_curves_to_csv(curves: &[TimeCurve]) -> String {
    let mut out = format!("{TIME_CSV_HEADER}\n");
    for curve in curves {
        for tp in &curve.points {
            let _ = write!(out, "{},{},", curve.profile.name, tp.t);
            match (&tp.n, &tp.point) {
                (_, Some(p)) => {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        p.n, p.mean_fidelity, p.std_fidelity, p.trials, p.estimator
                    );
                }
                (Some(n), None) => {
                    let _ = writeln!(out, "{n},,,,");
                }
                (None, None) => out.push_str(",,,,\n"),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{density_from_pure, PureState2Q};

    #[test]
    fn tomography_time_examples() {
        let p = TimingProfile::polarimeter();
        assert!((tomography_time(&p) - 0.901).abs() < 1e-12);
        let zero = TimingProfile {
            tau_m: 0.0,
            tau_s: 0.0,
            tau_a: 0.0,
            ..p
        };
        assert_eq!(tomography_time(&zero), 0.0);
        assert!((tomography_time(&TimingProfile::freespace()) - 59.0).abs() < 1e-12);
    }

    #[test]
    fn ensemble_size_examples() {
        let p = TimingProfile::polarimeter();
        // 1e6 · 0.07² · (1 − 9·0.02 − 0.001)
        let oracle = 1e6 * 0.0049 * 0.819;
        assert!((ensemble_size(&p, 1.0).unwrap() - oracle).abs() < 1e-9);
        assert!((oracle - 4013.1).abs() < 1e-9);

        let dark = TimingProfile {
            pair_rate: 0.0,
            ..p.clone()
        };
        assert_eq!(ensemble_size(&dark, 1.0).unwrap(), 0.0);
        assert_eq!(ensemble_size(&p, p.overhead()).unwrap(), 0.0);
        assert!(matches!(
            ensemble_size(&p, 0.1),
            Err(LabError::Infeasible { .. })
        ));
        let free = TimingProfile::freespace();
        assert!(ensemble_size(&free, 49.999).is_err());
        assert!((free.overhead() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn time_ensemble_inverse() {
        for p in [TimingProfile::polarimeter(), TimingProfile::freespace()] {
            for t in [50.0, 51.5, 60.0, 123.25, 1e4] {
                let n = ensemble_size(&p, t).unwrap();
                assert!((time_for_ensemble(&p, n).unwrap() - t).abs() < 1e-12 * t.max(1.0));
            }
        }
    }

    #[test]
    fn single_trial_std_is_zero() {
        let rho = density_from_pure(&PureState2Q::hh());
        let pts = precision_curve(&rho, &[900.0], 1, Method::Lls, &NoiseModel::default(), 3).unwrap();
        assert_eq!(pts[0].trials, 1);
        assert_eq!(pts[0].std_fidelity, 0.0);
        assert!(pts[0].mean_fidelity.is_finite());
    }

    #[test]
    fn curve_is_reproducible_and_order_free() {
        let rho = density_from_pure(&PureState2Q::phi_plus());
        let noise = NoiseModel::default();
        let a = precision_curve(&rho, &[500.0, 2000.0], 20, Method::Lls, &noise, 9).unwrap();
        let b = precision_curve(&rho, &[2000.0, 500.0], 20, Method::Lls, &noise, 9).unwrap();
        assert_eq!(a[0], b[1]);
        assert_eq!(a[1], b[0]);
        let c = precision_curve(&rho, &[500.0], 20, Method::Lls, &noise, 10).unwrap();
        assert_ne!(a[0], c[0]);
    }

    #[test]
    fn bad_inputs_rejected() {
        let rho = density_from_pure(&PureState2Q::hh());
        let noise = NoiseModel::default();
        assert_eq!(
            precision_curve(&rho, &[], 5, Method::Lls, &noise, 0),
            Err(LabError::NoEnsembleSizes)
        );
        assert!(precision_curve(&rho, &[0.0], 5, Method::Lls, &noise, 0).is_err());
        assert_eq!(
            precision_curve(&rho, &[10.0], 0, Method::Lls, &noise, 0),
            Err(LabError::NoTrials)
        );
    }

    #[test]
    fn infeasible_times_are_empty_points() {
        let rho = density_from_pure(&PureState2Q::phi_plus());
        let curves = precision_vs_time(
            &rho,
            &[TimingProfile::freespace(), TimingProfile::polarimeter()],
            &[1.0, 49.0],
            4,
            Method::Lls,
            &NoiseModel::default(),
            1,
            &StudyOptions::default(),
        )
        .unwrap();
        assert!(curves[0].points.iter().all(|p| p.point.is_none()));
        assert!(curves[1].points.iter().all(|p| p.point.is_some()));
        let csv = time_curves_to_csv(&curves);
        assert!(csv.starts_with(TIME_CSV_HEADER));
        assert!(csv.contains("freespace,1,,,,,\n"));
    }

    #[test]
    fn csv_layout() {
        let p = PrecisionPoint {
            n: 4000.0,
            mean_fidelity: 0.5,
            std_fidelity: 0.25,
            trials: 3,
            estimator: Method::Ml,
            failed: 0,
        };
        assert_eq!(curve_to_csv(&[p]), format!("{CURVE_CSV_HEADER}\n4000,0.5,0.25,3,ml\n"));
    }
}
