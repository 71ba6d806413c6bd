use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use polarimeter_core::engine::{replay as resimulate, Pacing};
use polarimeter_core::wire::{Capture, WireFrame};
use polarimeter_service::{start, ServiceOptions};

use crate::{emit, read, Ctx, Format};

#[derive(Debug, clap::Args)]
pub struct ServeArgs {
    /// Listen address.
    #[arg(long, default_value = "127.0.0.1:8765")]
    addr: SocketAddr,
    /// Run the engine as fast as possible instead of in real time.
    #[arg(long)]
    fast: bool,
    /// Record the session (config, commands, frames) to this file.
    #[arg(long, value_name = "FILE", conflicts_with = "replay")]
    capture: Option<PathBuf>,
    /// Serve a captured session instead of a live one; clients cannot steer.
    #[arg(long, value_name = "FILE")]
    replay: Option<PathBuf>,
    /// Stop after this many records.
    #[arg(long)]
    max_records: Option<u64>,
    /// Start the engine only once the first client has connected.
    #[arg(long)]
    hold: bool,
    /// Frames buffered per client before the oldest are dropped.
    #[arg(long, default_value_t = 64)]
    client_buffer: usize,
}

#[derive(Debug, clap::Args)]
pub struct ReplayArgs {
    /// Capture file written by `serve --capture`.
    capture: PathBuf,
    /// Write the re-simulated frames here, one JSON object per line.
    #[arg(long, value_name = "FILE")]
    frames: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn load_capture(path: &Path) -> Result<Capture> {
    Capture::parse(&read(path)?).with_context(|| format!("capture {}", path.display()))
}

pub fn serve(ctx: &Ctx, args: ServeArgs) -> Result<()> {
    let pacing = if args.fast { Pacing::Fast } else { Pacing::Realtime };
    let mut options = match &args.replay {
        Some(path) => {
            let capture = load_capture(path)?;
            let mut options = ServiceOptions::new(
                args.addr,
                polarimeter_core::engine::EngineConfig {
                    pacing,
                    ..capture.config.clone()
                },
                capture.source,
            );
            options.script = Some(capture.commands());
            options.max_records = Some(capture.records);
            options
        }
        None => {
            let engine = polarimeter_core::engine::EngineConfig {
                pacing,
                ..ctx.config.engine_config(ctx.seed)
            };
            let mut options = ServiceOptions::new(args.addr, engine, ctx.config.source);
            options.capture = args.capture.clone();
            options
        }
    };
    if args.max_records.is_some() {
        options.max_records = args.max_records;
    }
    options.hold_until_client = args.hold;
    options.client_buffer = args.client_buffer.max(1);

    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let service = start(options).await.map_err(|e| anyhow!("{e}"))?;
        eprintln!("listening on ws://{}", service.local_addr());
        let summary = loop {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => break service.shutdown().await,
                _ = tokio::time::sleep(Duration::from_millis(100)) => {
                    if service.is_finished() {
                        break service.shutdown().await;
                    }
                }
            }
        }
        .map_err(|e| anyhow!("{e}"))?;
        eprintln!(
            "{} frames from {} records in {:.1} s",
            summary.frames, summary.records, summary.wall_time
        );
        Ok(())
    })
}

pub fn replay(ctx: &Ctx, args: ReplayArgs) -> Result<()> {
    let capture = load_capture(&args.capture)?;
    let commands = capture.commands();
    let replayed: Vec<WireFrame> =
        resimulate(&capture.config, capture.source, &commands, capture.records)?
            .iter()
            .map(WireFrame::from_frame)
            .collect();
    let recorded = capture.frames();

    let matches: Vec<bool> = recorded
        .iter()
        .zip(&replayed)
        .map(|(a, b)| a.payload_without_timing() == b.payload_without_timing())
        .collect();
    let first_mismatch = matches
        .iter()
        .position(|m| !m)
        .map(|k| recorded[k].seq)
        .or_else(|| {
            (recorded.len() != replayed.len()).then(|| recorded.len().min(replayed.len()) as u64)
        });

    if let Some(path) = &args.frames {
        let mut text = String::new();
        for f in &replayed {
            text.push_str(&f.encode());
            text.push('\n');
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }

    let text = match ctx.format.unwrap_or(Format::Json) {
        Format::Json => {
            serde_json::to_string_pretty(&json!({
                "records": capture.records,
                "commands": commands.len(),
                "frames_recorded": recorded.len(),
                "frames_replayed": replayed.len(),
                "matching": matches.iter().filter(|m| **m).count(),
                "identical": first_mismatch.is_none(),
                "first_mismatch": first_mismatch,
            }))? + "\n"
        }
        Format::Csv => {
            let mut s = String::from("seq,identical,fidelity,purity,concurrence\n");
            for (f, m) in recorded.iter().zip(&matches) {
                let _ = writeln!(s, "{},{m},{},{},{}", f.seq, f.fidelity, f.purity, f.concurrence);
            }
            s
        }
    };
    emit(args.out.as_deref(), &text)?;
    if let Some(seq) = first_mismatch {
        bail!("replay diverges from the capture at frame {seq}");
    }
    Ok(())
}
