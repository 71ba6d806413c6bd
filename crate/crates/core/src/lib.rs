//! Entangled-photon polarimeter core.
//!
//! A simulated tunable two-photon source feeds Poisson coincidence counts
//! through four-detector polarization analyzers; every new measurement is
//! folded into a rolling window and the two-qubit density matrix is
//! reconstructed by a weighted linear least-squares fit with eigenvalue
//! truncation.
//!
//! Module map:
//! - [`quantum`]: density matrices, Stokes vectors, fidelity, purity, concurrence
//! - [`measurement`]: analyzer settings, the measurement matrix, count simulation
//! - [`reconstruction`]: LLS with truncation and the maximum-likelihood reference
//! - [`lab`]: tomography-time algebra and Monte Carlo precision studies
//! - [`engine`]: the live rolling-window instrument
//! - [`countfile`], [`wire`], [`config`]: on-disk and on-the-wire formats

pub mod config;
pub mod countfile;
pub mod engine;
pub mod lab;
pub mod measurement;
pub mod quantum;
pub mod reconstruction;
pub mod rng;
pub mod wire;

pub use measurement::{CountRecord, MeasurementMatrix, MeasurementSetting, NoiseModel};
pub use quantum::{DensityMatrix, PureState2Q, StokesVector2Q};
pub use reconstruction::{Method, ReconstructionReport};
