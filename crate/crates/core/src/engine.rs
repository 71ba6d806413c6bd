//! The live instrument: a steerable simulated source, a fixed setting
//! schedule and a rolling-window LLS reconstruction that emits one frame
//! per measurement once the window is full.
//!
//! Instrument time advances by `τ_m + τ_s` per record; a record is stamped
//! at the end of its dwell and its frame at `record + τ_a`. In fast pacing
//! no sleeping happens and every frame is a pure function of the config,
//! the initial source and the command log, which is what makes captures
//! replayable.

use std::collections::VecDeque;
use std::ops::ControlFlow;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError, TryRecvError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lab::TimingProfile;
use crate::measurement::{
    build_measurement_matrix, canonical_settings, perturb_projectors, simulate_counts_with,
    CountRecord, MeasurementMatrix, MeasurementSetting, NoiseModel,
};
use crate::quantum::{c, DensityMatrix, PureState2Q};
use crate::reconstruction::{lls_reconstruct, LlsOptions, ReconFlag};
use crate::rng::{seeded_rng, split_seed, streams, SimRng};

pub const MAX_WINDOW: usize = 900;
pub const MAX_RATE: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
}

/// Steerable parameters of the simulated entangled-photon source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceState {
    /// Pump half-wave-plate angle, radians.
    pub theta: f64,
    /// Coincidence-to-accidental ratio; `inf` for none.
    #[serde(deserialize_with = "crate::measurement::deserialize_car")]
    pub car: f64,
    /// Pair production rate, pairs/s.
    pub pair_rate: f64,
    /// Extra white-noise admixture `p`.
    pub depolarization: f64,
}

impl Default for SourceState {
    fn default() -> Self {
        Self {
            theta: 0.0,
            car: 3.0,
            pair_rate: 1e6,
            depolarization: 0.0,
        }
    }
}

impl SourceState {
    pub fn validate(&self) -> Result<(), String> {
        check_theta(self.theta)?;
        if !(self.car > 0.0) {
            return Err(format!("car must be > 0, got {}", self.car));
        }
        check_rate(self.pair_rate)?;
        if !(0.0..=1.0).contains(&self.depolarization) {
            return Err(format!(
                "depolarization must be in [0, 1], got {}",
                self.depolarization
            ));
        }
        Ok(())
    }
}

fn check_theta(theta: f64) -> Result<(), String> {
    if theta.is_finite() && theta.abs() <= 2.0 * std::f64::consts::PI {
        Ok(())
    } else {
        Err(format!("theta must be finite with |theta| <= 2π, got {theta}"))
    }
}

fn check_rate(rate: f64) -> Result<(), String> {
    if rate.is_finite() && rate > 0.0 && rate <= MAX_RATE {
        Ok(())
    } else {
        Err(format!("rate must be in (0, {MAX_RATE:e}], got {rate}"))
    }
}

fn check_window(m: usize) -> Result<(), String> {
    if m == 0 || !m.is_multiple_of(9) || m > MAX_WINDOW {
        Err(format!(
            "window must be a positive multiple of 9 up to {MAX_WINDOW}, got {m}"
        ))
    } else {
        Ok(())
    }
}

/// `|ψ(θ)⟩ = cos 2θ |HH⟩ + sin 2θ |VV⟩`.
pub fn source_ket(theta: f64) -> PureState2Q {
    let (s, co) = (2.0 * theta).sin_cos();
    PureState2Q::normalized([c(co, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(s, 0.0)])
        .expect("unit vector")
}

/// `(1 − p) |ψ(θ)⟩⟨ψ(θ)| + p I/4`.
pub fn source_density(state: &SourceState) -> DensityMatrix {
    DensityMatrix::from_pure(&source_ket(state.theta)).depolarize(state.depolarization)
}

/// Reference state for `fidelity_to_target`: the ideal (noise-free) source
/// state or a fixed named state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Source,
    Named(String),
}

impl Target {
    pub fn parse(name: &str) -> Result<Self, String> {
        match name {
            "source" => Ok(Self::Source),
            other if PureState2Q::named(other).is_some() => Ok(Self::Named(other.to_string())),
            other => Err(format!(
                "unknown target {other:?}; expected source, HH, HV, VH, VV, phi+, phi-, psi+ or psi-"
            )),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::Source => "source",
            Self::Named(n) => n,
        }
    }

    pub fn density(&self, source: &SourceState) -> DensityMatrix {
        match self {
            Self::Source => DensityMatrix::from_pure(&source_ket(source.theta)),
            Self::Named(n) => DensityMatrix::from_pure(&PureState2Q::named(n).expect("validated")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pacing {
    Realtime,
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettingOrder {
    /// 0, 1, …, 8, 0, 1, …
    Canonical,
    /// A seeded random permutation of the 9 settings, repeated. Any 9
    /// consecutive records still cover every setting.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// `τ_m`, `τ_s`, `τ_a` and `η` are used; the source supplies `R`.
    pub timing: TimingProfile,
    pub window_m: usize,
    pub pacing: Pacing,
    pub seed: u64,
    /// Dark counts and systematic misalignment; `pair_rate`, `car` and `eta`
    /// are taken from the source and timing profile instead.
    pub noise: NoiseModel,
    pub order: SettingOrder,
    pub lls: LlsOptions,
    /// `source` or a named state.
    pub target: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            timing: TimingProfile::polarimeter(),
            window_m: 9,
            pacing: Pacing::Realtime,
            seed: 0,
            noise: NoiseModel::default(),
            order: SettingOrder::Canonical,
            lls: LlsOptions::default(),
            target: "source".into(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |s: String| Err(EngineError::InvalidConfig(s));
        if let Err(e) = self.timing.validate() {
            return bad(e.to_string());
        }
        if !(self.timing.tau_m > 0.0) {
            return bad("tau_m must be > 0".into());
        }
        if let Err(e) = check_window(self.window_m) {
            return bad(e);
        }
        if let Err(e) = self.noise.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = Target::parse(&self.target) {
            return bad(e);
        }
        Ok(())
    }

    /// Seconds between frames: one dwell, one switch, one analysis.
    pub fn frame_period(&self) -> f64 {
        self.timing.tau_m + self.timing.tau_s + self.timing.tau_a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", content = "value", rename_all = "snake_case")]
pub enum Command {
    SetTheta(f64),
    SetCar(f64),
    SetRate(f64),
    SetWindow(usize),
    Pause,
    Resume,
    SetTarget(String),
}

/// A command together with the number of records simulated before it took
/// effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedCommand {
    pub record: u64,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub seq: u64,
    pub rho: DensityMatrix,
    pub fidelity_to_target: f64,
    pub purity: f64,
    pub concurrence: f64,
    /// Ids of the records in the window, oldest first.
    pub window: Vec<u64>,
    pub window_m: usize,
    /// Wall-clock reconstruction time, s.
    pub solve_time: f64,
    /// Instrument time, s.
    pub emit_time: f64,
    pub source: SourceState,
    pub target: String,
    pub flags: Vec<String>,
}

pub const FLAG_CARRIED_FORWARD: &str = "carried_forward";
pub const FLAG_CLAMPED: &str = "clamped_negative_counts";
pub const FLAG_NO_ESTIMATE: &str = "no_estimate";

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub record_id: u64,
    pub record: CountRecord,
    pub frame: Option<Frame>,
}

pub struct Engine {
    config: EngineConfig,
    source: SourceState,
    target: Target,
    actual: Vec<MeasurementSetting>,
    matrix: MeasurementMatrix,
    order: Vec<usize>,
    rng: SimRng,
    window: VecDeque<(u64, CountRecord)>,
    records: u64,
    next_seq: u64,
    clock: f64,
    paused: bool,
    last_rho: Option<DensityMatrix>,
    log: Vec<LoggedCommand>,
}

impl Engine {
    pub fn new(config: EngineConfig, source: SourceState) -> Result<Self, EngineError> {
        config.validate()?;
        source.validate().map_err(EngineError::InvalidConfig)?;
        let ideal: Vec<_> = canonical_settings(9)
            .expect("9 is supported")
            .into_iter()
            .map(|s| s.with_dwell(config.timing.tau_m))
            .collect();
        let matrix = build_measurement_matrix(&ideal).expect("canonical settings");
        let actual = perturb_projectors(&ideal, config.noise.systematic_angle, config.seed);
        let mut order: Vec<usize> = (0..ideal.len()).collect();
        if config.order == SettingOrder::Shuffled {
            order.shuffle(&mut seeded_rng(split_seed(config.seed, streams::ORDER)));
        }
        let target = Target::parse(&config.target).expect("validated");
        Ok(Self {
            rng: seeded_rng(split_seed(config.seed, streams::COUNTS)),
            window: VecDeque::with_capacity(config.window_m),
            config,
            source,
            target,
            actual,
            matrix,
            order,
            records: 0,
            next_seq: 0,
            clock: 0.0,
            paused: false,
            last_rho: None,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn source(&self) -> &SourceState {
        &self.source
    }

    pub fn matrix(&self) -> &MeasurementMatrix {
        &self.matrix
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn records_simulated(&self) -> u64 {
        self.records
    }

    /// Accepted commands in the order applied.
    pub fn command_log(&self) -> &[LoggedCommand] {
        &self.log
    }

    /// Sequence number the next frame will carry.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    fn noise(&self) -> NoiseModel {
        NoiseModel {
            pair_rate: self.source.pair_rate,
            car: self.source.car,
            eta: self.config.timing.eta,
            ..self.config.noise
        }
    }

    /// Validates and applies a command at the current dwell boundary.
    /// Returns the sequence number of the first frame that reflects it.
    pub fn apply_command(&mut self, command: Command) -> Result<u64, String> {
        match &command {
            Command::SetTheta(theta) => {
                check_theta(*theta)?;
                self.source.theta = *theta;
            }
            Command::SetCar(car) => {
                if !(car.is_finite() && *car > 0.0) {
                    return Err(format!("car must be finite and > 0, got {car}"));
                }
                self.source.car = *car;
            }
            Command::SetRate(rate) => {
                check_rate(*rate)?;
                self.source.pair_rate = *rate;
            }
            Command::SetWindow(m) => {
                check_window(*m)?;
                self.config.window_m = *m;
                self.window.clear();
            }
            Command::Pause => self.paused = true,
            Command::Resume => self.paused = false,
            Command::SetTarget(name) => {
                self.target = Target::parse(name)?;
                self.config.target = name.clone();
            }
        }
        self.log.push(LoggedCommand {
            record: self.records,
            command,
        });
        Ok(self.next_seq)
    }

    /// Simulates one dwell and, once the window is full, reconstructs.
    pub fn step(&mut self) -> Step {
        let slot = self.order[(self.records % self.order.len() as u64) as usize];
        let setting = &self.actual[slot];
        let rho = source_density(&self.source);
        let noise = self.noise();
        let timestamp = self.clock + self.config.timing.tau_m;
        let record = simulate_counts_with(&mut self.rng, &rho, setting, &noise, timestamp);
        let record_id = self.records;
        self.records += 1;
        self.clock += self.config.timing.tau_m + self.config.timing.tau_s;

        self.window.push_back((record_id, record.clone()));
        while self.window.len() > self.config.window_m {
            self.window.pop_front();
        }
        let frame = (self.window.len() == self.config.window_m)
            .then(|| self.reconstruct_window(timestamp + self.config.timing.tau_a));
        Step {
            record_id,
            record,
            frame,
        }
    }

    fn reconstruct_window(&mut self, emit_time: f64) -> Frame {
        let records: Vec<CountRecord> = self.window.iter().map(|(_, r)| r.clone()).collect();
        let mut flags = Vec::new();
        let (rho, solve_time) = match lls_reconstruct(&self.matrix, &records, &self.config.lls) {
            Ok(report) => {
                if report.flags.contains(&ReconFlag::ClampedNegativeCounts) {
                    flags.push(FLAG_CLAMPED.to_string());
                }
                self.last_rho = Some(report.rho);
                (report.rho, report.solve_time)
            }
            Err(e) => {
                flags.push(FLAG_CARRIED_FORWARD.to_string());
                flags.push(format!("error:{e}"));
                match &self.last_rho {
                    Some(rho) => (*rho, 0.0),
                    None => {
                        flags.push(FLAG_NO_ESTIMATE.to_string());
                        (DensityMatrix::maximally_mixed(), 0.0)
                    }
                }
            }
        };
        let target = self.target.density(&self.source);
        let seq = self.next_seq;
        self.next_seq += 1;
        Frame {
            seq,
            fidelity_to_target: rho.fidelity(&target),
            purity: rho.purity(),
            concurrence: rho.concurrence(),
            rho,
            window: self.window.iter().map(|(id, _)| *id).collect(),
            window_m: self.config.window_m,
            solve_time,
            emit_time,
            source: self.source,
            target: self.target.name().to_string(),
            flags,
        }
    }
}

pub type Reply = Box<dyn FnOnce(Result<u64, String>) + Send>;

/// A queued command and where to send its acknowledgement.
pub struct Envelope {
    pub command: Command,
    pub reply: Option<Reply>,
}

impl Envelope {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            reply: None,
        }
    }

    pub fn with_reply(command: Command, reply: impl FnOnce(Result<u64, String>) + Send + 'static) -> Self {
        Self {
            command,
            reply: Some(Box::new(reply)),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub max_frames: Option<u64>,
    /// Stop after this many records (frames or not).
    pub max_records: Option<u64>,
    pub stop: Option<Arc<AtomicBool>>,
    /// Commands applied when the record counter reaches their `record`
    /// (replaying a capture). Pause and resume entries are skipped.
    pub script: Vec<LoggedCommand>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub frames: u64,
    pub records: u64,
    pub wall_time: f64,
}

fn deliver(engine: &mut Engine, envelope: Envelope) {
    let result = engine.apply_command(envelope.command);
    if let Some(reply) = envelope.reply {
        reply(result);
    }
}

/// Runs the acquisition loop until `sink` breaks, a limit is reached or
/// `stop` is raised. Commands queued on `commands` apply at the next dwell
/// boundary. In realtime pacing frames are spaced `τ_m + τ_s + τ_a` apart
/// against absolute deadlines; a paused engine waits on the queue.
pub fn run_stream<F>(
    engine: &mut Engine,
    commands: &Receiver<Envelope>,
    options: &RunOptions,
    mut sink: F,
) -> RunSummary
where
    F: FnMut(&Frame, &Engine) -> ControlFlow<()>,
{
    let mut script = options
        .script
        .iter()
        .filter(|c| !matches!(c.command, Command::Pause | Command::Resume))
        .peekable();
    let start = Instant::now();
    let period = Duration::from_secs_f64(engine.config.frame_period());
    let mut deadline = Instant::now();
    let mut frames = 0;
    let mut records = 0;
    let mut connected = true;
    let stopped = || options.stop.as_ref().is_some_and(|s| s.load(Ordering::Relaxed));
    loop {
        if stopped()
            || options.max_frames.is_some_and(|m| frames >= m)
            || options.max_records.is_some_and(|m| records >= m)
        {
            break;
        }
        while connected {
            match commands.try_recv() {
                Ok(envelope) => deliver(engine, envelope),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => connected = false,
            }
        }
        if engine.paused {
            if !connected {
                break;
            }
            match commands.recv_timeout(Duration::from_millis(50)) {
                Ok(envelope) => deliver(engine, envelope),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => connected = false,
            }
            deadline = Instant::now();
            continue;
        }
        while let Some(c) = script.next_if(|c| c.record <= engine.records) {
            // a scripted command was valid when it was recorded
            let _ = engine.apply_command(c.command.clone());
        }
        let step = engine.step();
        records += 1;
        if let Some(frame) = step.frame {
            frames += 1;
            if sink(&frame, engine).is_break() {
                break;
            }
        }
        if engine.config.pacing == Pacing::Realtime {
            deadline += period;
            let now = Instant::now();
            if deadline > now {
                std::thread::sleep(deadline - now);
            } else if now - deadline > period {
                // fell more than a frame behind: re-anchor rather than burst
                deadline = now;
            }
        }
    }
    RunSummary {
        frames,
        records,
        wall_time: start.elapsed().as_secs_f64(),
    }
}

/// Re-runs an engine in fast pacing, applying each logged command before
/// the record it was logged at, and returns the frames.
pub fn replay(
    config: &EngineConfig,
    source: SourceState,
    commands: &[LoggedCommand],
    records: u64,
) -> Result<Vec<Frame>, EngineError> {
    let mut engine = Engine::new(config.clone(), source)?;
    let mut frames = Vec::new();
    let mut pending = commands.iter().peekable();
    for k in 0..records {
        while let Some(cmd) = pending.next_if(|c| c.record <= k) {
            engine
                .apply_command(cmd.command.clone())
                .map_err(EngineError::InvalidConfig)?;
        }
        if let Some(frame) = engine.step().frame {
            frames.push(frame);
        }
    }
    Ok(frames)
}
