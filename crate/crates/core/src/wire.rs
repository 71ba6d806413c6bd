//! JSON wire schema (version 1) and session capture files.
//!
//! Server → client messages carry `"type"` (`hello`, `frame`, `ack`) and
//! `"v": 1`; client → server messages are bare commands
//! `{"cmd": …, "value": …, "req_id": …}`. The layout is specified byte for
//! byte in `docs/wire-protocol.md`.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::engine::{Command, EngineConfig, Frame, LoggedCommand, SourceState};
use crate::measurement::canonical_settings;
use crate::quantum::DensityMatrix;

pub const WIRE_VERSION: u32 = 1;
pub const SCHEMA_NAME: &str = "polarimeter-wire";
pub const MAX_REQ_ID_LEN: usize = 128;
pub const MAX_TARGET_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("{0}")]
    Schema(String),
    #[error("unsupported schema version {0}")]
    Version(u64),
}

fn schema<T>(msg: impl Into<String>) -> Result<T, WireError> {
    Err(WireError::Schema(msg.into()))
}

/// Client-chosen request identifier, echoed in the ack.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReqId {
    Num(u64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireSource {
    pub theta: f64,
    /// `null` when there are no accidentals.
    pub car: Option<f64>,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireFrame {
    #[serde(rename = "type")]
    pub kind: String,
    pub v: u32,
    pub seq: u64,
    /// Instrument time, s.
    pub t: f64,
    /// Row-major `(re, im)` pairs in `{HH, HV, VH, VV}` order.
    pub rho: Vec<f64>,
    /// `S_ij = Tr(ρ σ_i ⊗ σ_j)` at index `4i + j`.
    pub stokes: Vec<f64>,
    pub fidelity: f64,
    pub purity: f64,
    pub concurrence: f64,
    pub window_m: usize,
    pub solve_ms: f64,
    pub source: WireSource,
    pub target: String,
    pub flags: Vec<String>,
}

impl WireFrame {
    pub fn from_frame(frame: &Frame) -> Self {
        Self {
            kind: "frame".into(),
            v: WIRE_VERSION,
            seq: frame.seq,
            t: frame.emit_time,
            rho: frame.rho.to_flat(),
            stokes: frame.rho.stokes().as_slice().to_vec(),
            fidelity: frame.fidelity_to_target,
            purity: frame.purity,
            concurrence: frame.concurrence,
            window_m: frame.window_m,
            solve_ms: frame.solve_time * 1e3,
            source: WireSource {
                theta: frame.source.theta,
                car: frame.source.car.is_finite().then_some(frame.source.car),
                rate: frame.source.pair_rate,
            },
            target: frame.target.clone(),
            flags: frame.flags.clone(),
        }
    }

    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("frame serializes")
    }

    pub fn decode(text: &str) -> Result<Self, WireError> {
        let frame: WireFrame =
            serde_json::from_str(text).map_err(|e| WireError::Json(e.to_string()))?;
        frame.validate()?;
        Ok(frame)
    }

    pub fn density(&self) -> Result<DensityMatrix, WireError> {
        DensityMatrix::from_flat(&self.rho).map_err(|e| WireError::Schema(format!("rho: {e}")))
    }

    pub fn validate(&self) -> Result<(), WireError> {
        if self.kind != "frame" {
            return schema(format!("expected type \"frame\", got {:?}", self.kind));
        }
        if self.v != WIRE_VERSION {
            return Err(WireError::Version(self.v.into()));
        }
        if self.rho.len() != 32 {
            return schema(format!("rho must have 32 reals, got {}", self.rho.len()));
        }
        if self.stokes.len() != 16 {
            return schema(format!("stokes must have 16 reals, got {}", self.stokes.len()));
        }
        self.density()?;
        let finite = [
            ("t", self.t),
            ("fidelity", self.fidelity),
            ("purity", self.purity),
            ("concurrence", self.concurrence),
            ("solve_ms", self.solve_ms),
            ("source.theta", self.source.theta),
            ("source.rate", self.source.rate),
        ];
        if let Some((name, _)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return schema(format!("{name} must be finite"));
        }
        if self.stokes.iter().any(|v| !v.is_finite()) {
            return schema("stokes must be finite");
        }
        for (name, v) in [
            ("fidelity", self.fidelity),
            ("purity", self.purity),
            ("concurrence", self.concurrence),
        ] {
            if !(-1e-9..=1.0 + 1e-9).contains(&v) {
                return schema(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.window_m == 0 || !self.window_m.is_multiple_of(9) {
            return schema(format!("window_m must be a positive multiple of 9, got {}", self.window_m));
        }
        if self.source.car.is_some_and(|c| !(c.is_finite() && c > 0.0)) {
            return schema("source.car must be > 0 or null");
        }
        Ok(())
    }

    /// Encoding with `t` and `solve_ms` zeroed: the part of a frame that is
    /// a deterministic function of seed, config and command log.
    pub fn payload_without_timing(&self) -> String {
        Self {
            t: 0.0,
            solve_ms: 0.0,
            ..self.clone()
        }
        .encode()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireCommand {
    pub command: Command,
    pub req_id: ReqId,
}

/// A rejected command; `req_id` is set when it could be recovered.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}")]
pub struct CommandError {
    pub req_id: Option<ReqId>,
    pub message: String,
}

impl WireCommand {
    pub fn encode(&self) -> String {
        let mut obj = Map::new();
        let (name, value) = command_parts(&self.command);
        obj.insert("cmd".into(), Value::String(name.into()));
        if let Some(v) = value {
            obj.insert("value".into(), v);
        }
        obj.insert(
            "req_id".into(),
            serde_json::to_value(&self.req_id).expect("req_id serializes"),
        );
        Value::Object(obj).to_string()
    }

    pub fn decode(text: &str) -> Result<Self, CommandError> {
        let fail = |req_id: Option<ReqId>, message: String| CommandError { req_id, message };
        let value: Value = serde_json::from_str(text).map_err(|e| fail(None, format!("malformed JSON: {e}")))?;
        let Value::Object(obj) = value else {
            return Err(fail(None, "command must be a JSON object".into()));
        };
        let req_id = match obj.get("req_id") {
            Some(Value::Number(n)) => n.as_u64().map(ReqId::Num),
            Some(Value::String(s)) if s.len() <= MAX_REQ_ID_LEN => Some(ReqId::Text(s.clone())),
            _ => None,
        };
        let Some(req_id) = req_id else {
            return Err(fail(
                None,
                format!("req_id must be a non-negative integer or a string of at most {MAX_REQ_ID_LEN} bytes"),
            ));
        };
        let bad = |m: String| Err(fail(Some(req_id.clone()), m));
        for key in obj.keys() {
            if !matches!(key.as_str(), "cmd" | "value" | "req_id") {
                return bad(format!("unknown field {key:?}"));
            }
        }
        let Some(Value::String(name)) = obj.get("cmd") else {
            return bad("cmd must be a string".into());
        };
        let value = obj.get("value").filter(|v| !v.is_null());
        let number = |v: Option<&Value>| -> Result<f64, CommandError> {
            v.and_then(Value::as_f64)
                .ok_or_else(|| fail(Some(req_id.clone()), format!("{name} needs a numeric value")))
        };
        let command = match name.as_str() {
            "set_theta" => Command::SetTheta(number(value)?),
            "set_car" => Command::SetCar(number(value)?),
            "set_rate" => Command::SetRate(number(value)?),
            "set_window" => match value.and_then(Value::as_u64) {
                Some(m) if m <= u32::MAX as u64 => Command::SetWindow(m as usize),
                _ => return bad("set_window needs a non-negative integer value".into()),
            },
            "pause" | "resume" if value.is_some() => {
                return bad(format!("{name} takes no value"));
            }
            "pause" => Command::Pause,
            "resume" => Command::Resume,
            "set_target" => match value {
                Some(Value::String(s)) if s.len() <= MAX_TARGET_LEN => Command::SetTarget(s.clone()),
                _ => return bad("set_target needs a state name".into()),
            },
            other => return bad(format!("unknown cmd {other:?}")),
        };
        Ok(Self { command, req_id })
    }
}

fn command_parts(command: &Command) -> (&'static str, Option<Value>) {
    match command {
        Command::SetTheta(v) => ("set_theta", Some(Value::from(*v))),
        Command::SetCar(v) => ("set_car", Some(Value::from(*v))),
        Command::SetRate(v) => ("set_rate", Some(Value::from(*v))),
        Command::SetWindow(m) => ("set_window", Some(Value::from(*m as u64))),
        Command::Pause => ("pause", None),
        Command::Resume => ("resume", None),
        Command::SetTarget(s) => ("set_target", Some(Value::String(s.clone()))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ack {
    #[serde(rename = "type")]
    pub kind: String,
    pub v: u32,
    pub req_id: Option<ReqId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applied_seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Ack {
    pub fn applied(req_id: ReqId, seq: u64) -> Self {
        Self {
            kind: "ack".into(),
            v: WIRE_VERSION,
            req_id: Some(req_id),
            applied_seq: Some(seq),
            error: None,
        }
    }

    pub fn rejected(req_id: Option<ReqId>, error: impl Into<String>) -> Self {
        Self {
            kind: "ack".into(),
            v: WIRE_VERSION,
            req_id,
            applied_seq: None,
            error: Some(error.into()),
        }
    }

    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("ack serializes")
    }

    pub fn decode(text: &str) -> Result<Self, WireError> {
        let ack: Ack = serde_json::from_str(text).map_err(|e| WireError::Json(e.to_string()))?;
        if ack.kind != "ack" {
            return schema("expected type \"ack\"");
        }
        if ack.v != WIRE_VERSION {
            return Err(WireError::Version(ack.v.into()));
        }
        if ack.applied_seq.is_some() == ack.error.is_some() {
            return schema("ack carries exactly one of applied_seq or error");
        }
        Ok(ack)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireSetting {
    pub id: usize,
    pub bases: [String; 2],
    pub outcomes: [String; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    #[serde(rename = "type")]
    pub kind: String,
    pub v: u32,
    pub schema: String,
    pub settings: Vec<WireSetting>,
    pub config: EngineConfig,
    pub source: SourceState,
}

impl Hello {
    pub fn new(config: &EngineConfig, source: &SourceState) -> Self {
        let settings = canonical_settings(9)
            .expect("9 is supported")
            .iter()
            .map(|s| WireSetting {
                id: s.id,
                bases: s.bases.map(|b| b.to_string()),
                outcomes: s.outcome_labels(),
            })
            .collect();
        Self {
            kind: "hello".into(),
            v: WIRE_VERSION,
            schema: SCHEMA_NAME.into(),
            settings,
            config: config.clone(),
            source: *source,
        }
    }

    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("hello serializes")
    }

    pub fn decode(text: &str) -> Result<Self, WireError> {
        let hello: Hello = serde_json::from_str(text).map_err(|e| WireError::Json(e.to_string()))?;
        if hello.kind != "hello" || hello.schema != SCHEMA_NAME {
            return schema("not a polarimeter-wire hello");
        }
        if hello.v != WIRE_VERSION {
            return Err(WireError::Version(hello.v.into()));
        }
        Ok(hello)
    }
}

/// Any server → client message.
#[derive(Debug, Clone, PartialEq)]
pub enum ServerMessage {
    Hello(Box<Hello>),
    Frame(Box<WireFrame>),
    Ack(Ack),
}

impl ServerMessage {
    pub fn decode(text: &str) -> Result<Self, WireError> {
        let value: Value = serde_json::from_str(text).map_err(|e| WireError::Json(e.to_string()))?;
        match value.get("type").and_then(Value::as_str) {
            Some("hello") => Hello::decode(text).map(|h| Self::Hello(Box::new(h))),
            Some("frame") => WireFrame::decode(text).map(|f| Self::Frame(Box::new(f))),
            Some("ack") => Ack::decode(text).map(Self::Ack),
            _ => schema("unknown message type"),
        }
    }
}

pub const CAPTURE_MAGIC: &str = "capture";

/// One line of a capture body, in the order it happened.
#[derive(Debug, Clone, PartialEq)]
pub enum CaptureEntry {
    Command(LoggedCommand),
    Frame(Box<WireFrame>),
}

/// A recorded session: everything needed to re-simulate it plus the frames
/// that were emitted.
#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub config: EngineConfig,
    pub source: SourceState,
    pub entries: Vec<CaptureEntry>,
    /// Records simulated over the session.
    pub records: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptureHeader {
    #[serde(rename = "type")]
    kind: String,
    v: u32,
    config: EngineConfig,
    source: SourceState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptureCommand {
    #[serde(rename = "type")]
    kind: String,
    record: u64,
    #[serde(flatten)]
    command: Command,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptureEnd {
    #[serde(rename = "type")]
    kind: String,
    records: u64,
    frames: u64,
}

impl Capture {
    pub fn commands(&self) -> Vec<LoggedCommand> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                CaptureEntry::Command(c) => Some(c.clone()),
                CaptureEntry::Frame(_) => None,
            })
            .collect()
    }

    pub fn frames(&self) -> Vec<&WireFrame> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                CaptureEntry::Frame(f) => Some(&**f),
                CaptureEntry::Command(_) => None,
            })
            .collect()
    }

    /// JSON lines: header, entries, then an `end` line.
    pub fn to_text(&self) -> String {
        let mut writer = CaptureWriter::new(Vec::new(), &self.config, &self.source)
            .expect("writing to memory");
        for entry in &self.entries {
            match entry {
                CaptureEntry::Command(c) => writer.command(c),
                CaptureEntry::Frame(f) => writer.frame(f),
            }
            .expect("writing to memory");
        }
        let bytes = writer.finish(self.records).expect("writing to memory");
        String::from_utf8(bytes).expect("JSON is UTF-8")
    }

    pub fn parse(text: &str) -> Result<Self, WireError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let at = |n: usize, e: WireError| WireError::Schema(format!("line {}: {e}", n + 1));
        let Some((n, first)) = lines.next() else {
            return schema("empty capture");
        };
        let header: CaptureHeader =
            serde_json::from_str(first).map_err(|e| at(n, WireError::Json(e.to_string())))?;
        if header.kind != CAPTURE_MAGIC {
            return schema("line 1: not a capture header");
        }
        if header.v != WIRE_VERSION {
            return Err(WireError::Version(header.v.into()));
        }
        header
            .config
            .validate()
            .map_err(|e| at(n, WireError::Schema(e.to_string())))?;
        header
            .source
            .validate()
            .map_err(|e| at(n, WireError::Schema(e)))?;

        let mut entries = Vec::new();
        let mut last_record = 0;
        let mut last_seq: Option<u64> = None;
        let mut frames = 0u64;
        let mut end = None;
        for (n, line) in lines {
            if end.is_some() {
                return Err(at(n, WireError::Schema("content after end line".into())));
            }
            let value: Value =
                serde_json::from_str(line).map_err(|e| at(n, WireError::Json(e.to_string())))?;
            match value.get("type").and_then(Value::as_str) {
                Some("command") => {
                    let c: CaptureCommand = serde_json::from_value(value)
                        .map_err(|e| at(n, WireError::Json(e.to_string())))?;
                    if c.record < last_record {
                        return Err(at(n, WireError::Schema("commands out of order".into())));
                    }
                    last_record = c.record;
                    entries.push(CaptureEntry::Command(LoggedCommand {
                        record: c.record,
                        command: c.command,
                    }));
                }
                Some("frame") => {
                    let f = WireFrame::decode(line).map_err(|e| at(n, e))?;
                    if last_seq.is_some_and(|s| f.seq != s.wrapping_add(1)) {
                        return Err(at(n, WireError::Schema("frame seq not gapless".into())));
                    }
                    last_seq = Some(f.seq);
                    frames += 1;
                    entries.push(CaptureEntry::Frame(Box::new(f)));
                }
                Some("end") => {
                    let e: CaptureEnd = serde_json::from_value(value)
                        .map_err(|e| at(n, WireError::Json(e.to_string())))?;
                    if e.kind != "end" || e.frames != frames {
                        return Err(at(n, WireError::Schema("frame count mismatch".into())));
                    }
                    end = Some(e.records);
                }
                _ => return Err(at(n, WireError::Schema("unknown line type".into()))),
            }
        }
        let Some(records) = end else {
            return schema("capture truncated: no end line");
        };
        if last_record > records {
            return schema("command logged after the last record");
        }
        Ok(Self {
            config: header.config,
            source: header.source,
            entries,
            records,
        })
    }
}

/// Streams a capture to disk as the session runs.
pub struct CaptureWriter<W: std::io::Write> {
    out: W,
    frames: u64,
}

impl<W: std::io::Write> CaptureWriter<W> {
    pub fn new(mut out: W, config: &EngineConfig, source: &SourceState) -> std::io::Result<Self> {
        let header = CaptureHeader {
            kind: CAPTURE_MAGIC.into(),
            v: WIRE_VERSION,
            config: config.clone(),
            source: *source,
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        Ok(Self { out, frames: 0 })
    }

    pub fn command(&mut self, c: &LoggedCommand) -> std::io::Result<()> {
        self.out.write_all(encode_capture_command(c).as_bytes())
    }

    pub fn frame(&mut self, f: &WireFrame) -> std::io::Result<()> {
        self.frames += 1;
        writeln!(self.out, "{}", f.encode())
    }

    pub fn finish(mut self, records: u64) -> std::io::Result<W> {
        let end = CaptureEnd {
            kind: "end".into(),
            records,
            frames: self.frames,
        };
        writeln!(self.out, "{}", serde_json::to_string(&end).expect("end serializes"))?;
        self.out.flush()?;
        Ok(self.out)
    }
}

fn encode_capture_command(c: &LoggedCommand) -> String {
    let line = CaptureCommand {
        kind: "command".into(),
        record: c.record,
        command: c.command.clone(),
    };
    let mut s = serde_json::to_string(&line).expect("command serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Engine, Pacing};
    use crate::quantum::random;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn engine_frames(n: usize) -> (Engine, Vec<Frame>) {
        let config = EngineConfig {
            pacing: Pacing::Fast,
            seed: 4,
            ..Default::default()
        };
        let mut engine = Engine::new(config, SourceState::default()).unwrap();
        let mut frames = Vec::new();
        for k in 0..n {
            if k == 12 {
                engine.apply_command(Command::SetTheta(0.25)).unwrap();
            }
            frames.extend(engine.step().frame);
        }
        (engine, frames)
    }

    #[test]
    fn frame_round_trip_and_layout() {
        let (_, frames) = engine_frames(12);
        let wire = WireFrame::from_frame(&frames[0]);
        let text = wire.encode();
        assert!(text.starts_with(r#"{"type":"frame","v":1,"seq":0,"t":"#));
        assert!(text.contains(r#""source":{"theta":0.0,"car":3.0,"rate":1000000.0}"#));
        assert_eq!(WireFrame::decode(&text).unwrap(), wire);
        assert_eq!(wire.density().unwrap(), frames[0].rho);
    }

    #[test]
    fn frame_decoder_rejects_illegal_rho() {
        let (_, frames) = engine_frames(9);
        let mut wire = WireFrame::from_frame(&frames[0]);
        wire.rho[0] = 2.0;
        assert!(WireFrame::decode(&wire.encode()).is_err());
        let mut wire = WireFrame::from_frame(&frames[0]);
        wire.v = 2;
        assert_eq!(WireFrame::decode(&wire.encode()), Err(WireError::Version(2)));
        assert!(WireFrame::decode("{}").is_err());
    }

    #[test]
    fn command_decoding() {
        let c = WireCommand::decode(r#"{"cmd":"set_theta","value":0.39269908169872414,"req_id":7}"#).unwrap();
        assert_eq!(c.command, Command::SetTheta(std::f64::consts::FRAC_PI_8));
        assert_eq!(c.req_id, ReqId::Num(7));
        let c = WireCommand::decode(r#"{"cmd":"pause","req_id":"a"}"#).unwrap();
        assert_eq!(c.command, Command::Pause);

        let e = WireCommand::decode(r#"{"cmd":"set_theta","req_id":3}"#).unwrap_err();
        assert_eq!(e.req_id, Some(ReqId::Num(3)));
        let e = WireCommand::decode(r#"{"cmd":"warp","value":1,"req_id":3}"#).unwrap_err();
        assert!(e.message.contains("unknown cmd"));
        assert!(WireCommand::decode(r#"{"cmd":"pause"}"#).unwrap_err().req_id.is_none());
        assert!(WireCommand::decode("[1]").is_err());
        assert!(WireCommand::decode(r#"{"cmd":"set_window","value":-9,"req_id":1}"#).is_err());
        assert!(WireCommand::decode(r#"{"cmd":"pause","value":1,"req_id":1}"#).is_err());
        assert!(WireCommand::decode(r#"{"cmd":"pause","req_id":1,"x":0}"#).is_err());
    }

    #[test]
    fn ack_layout() {
        assert_eq!(
            Ack::applied(ReqId::Num(7), 42).encode(),
            r#"{"type":"ack","v":1,"req_id":7,"applied_seq":42}"#
        );
        assert_eq!(
            Ack::rejected(None, "bad").encode(),
            r#"{"type":"ack","v":1,"req_id":null,"error":"bad"}"#
        );
        let a = Ack::rejected(Some(ReqId::Text("x".into())), "no");
        assert_eq!(Ack::decode(&a.encode()).unwrap(), a);
    }

    #[test]
    fn hello_round_trip() {
        let hello = Hello::new(&EngineConfig::default(), &SourceState::default());
        assert_eq!(hello.settings.len(), 9);
        assert_eq!(hello.settings[0].outcomes, ["HH", "HV", "VH", "VV"].map(String::from));
        let text = hello.encode();
        assert!(text.starts_with(r#"{"type":"hello","v":1,"schema":"polarimeter-wire","settings":[{"id":0,"bases":["HV","HV"]"#));
        assert_eq!(Hello::decode(&text).unwrap(), hello);
        assert!(matches!(ServerMessage::decode(&text), Ok(ServerMessage::Hello(_))));
    }

    #[test]
    fn infinite_car_travels_as_null() {
        let source = SourceState {
            car: f64::INFINITY,
            ..Default::default()
        };
        let hello = Hello::new(&EngineConfig::default(), &source);
        let back = Hello::decode(&hello.encode()).unwrap();
        assert!(back.source.car.is_infinite());
    }

    #[test]
    fn capture_round_trip() {
        let (engine, frames) = engine_frames(40);
        let mut entries: Vec<CaptureEntry> = frames[..4]
            .iter()
            .map(|f| CaptureEntry::Frame(Box::new(WireFrame::from_frame(f))))
            .collect();
        entries.extend(engine.command_log().iter().cloned().map(CaptureEntry::Command));
        entries.extend(
            frames[4..]
                .iter()
                .map(|f| CaptureEntry::Frame(Box::new(WireFrame::from_frame(f)))),
        );
        let capture = Capture {
            config: engine.config().clone(),
            source: SourceState::default(),
            entries,
            records: engine.records_simulated(),
        };
        let text = capture.to_text();
        let back = Capture::parse(&text).unwrap();
        assert_eq!(back, capture);
        assert_eq!(back.commands(), engine.command_log());
        assert_eq!(back.frames().len(), frames.len());
        assert!(Capture::parse(&text.replace(r#""type":"end""#, r#""type":"nd""#)).is_err());
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(Capture::parse(&truncated).is_err());
    }

    fn arb_frame() -> impl Strategy<Value = WireFrame> {
        (
            any::<u64>(),
            0u64..u64::MAX / 2,
            0.0f64..1e6,
            prop::option::of(0.01f64..1e3),
            -6.0f64..6.0,
            prop::sample::select(vec![9usize, 18, 36, 90]),
            prop::collection::vec("[a-z_:0-9]{0,12}", 0..3),
        )
            .prop_map(|(state_seed, seq, t, car, theta, window_m, flags)| {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(state_seed);
                let rho = random::any_density_matrix(&mut rng);
                WireFrame {
                    kind: "frame".into(),
                    v: WIRE_VERSION,
                    seq,
                    t,
                    rho: rho.to_flat(),
                    stokes: rho.stokes().as_slice().to_vec(),
                    fidelity: rho.fidelity(&DensityMatrix::maximally_mixed()),
                    purity: rho.purity(),
                    concurrence: rho.concurrence(),
                    window_m,
                    solve_ms: t / 1e3,
                    source: WireSource {
                        theta,
                        car,
                        rate: t + 1.0,
                    },
                    target: "source".into(),
                    flags,
                }
            })
    }

    fn arb_command() -> impl Strategy<Value = WireCommand> {
        let command = prop_oneof![
            any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(Command::SetTheta),
            (1e-3f64..1e6).prop_map(Command::SetCar),
            (1.0f64..1e9).prop_map(Command::SetRate),
            (0usize..1000).prop_map(Command::SetWindow),
            Just(Command::Pause),
            Just(Command::Resume),
            "[A-Za-z+-]{1,8}".prop_map(Command::SetTarget),
        ];
        let req = prop_oneof![
            any::<u64>().prop_map(ReqId::Num),
            "[ -~]{0,20}".prop_map(ReqId::Text),
        ];
        (command, req).prop_map(|(command, req_id)| WireCommand { command, req_id })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn frames_round_trip(frame in arb_frame()) {
            prop_assert_eq!(WireFrame::decode(&frame.encode()).unwrap(), frame);
        }

        #[test]
        fn commands_round_trip(cmd in arb_command()) {
            prop_assert_eq!(WireCommand::decode(&cmd.encode()).unwrap(), cmd);
        }
    }

    proptest! {
        #[test]
        fn decoders_never_panic(text in "\\PC{0,300}") {
            let _ = WireFrame::decode(&text);
            let _ = WireCommand::decode(&text);
            let _ = ServerMessage::decode(&text);
            let _ = Capture::parse(&text);
        }
    }
}
