//! WebSocket front end for the polarimeter engine.
//!
//! One engine thread runs the acquisition loop and publishes every frame on
//! a broadcast channel; each client connection is an independent task with
//! its own receiver. A client that falls behind loses the oldest frames,
//! and the next frame it does receive carries `dropped:<n>` in `flags`.
//! Commands from any client go through one ordered queue to the engine and
//! are acknowledged on the connection that sent them.
//!
//! On connect the server sends one `hello` message before any frame; see
//! `docs/wire-protocol.md`.

use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::ops::ControlFlow;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::JoinHandle;

use futures::{SinkExt, StreamExt};
use log::{debug, info, warn};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::broadcast::{self, error::RecvError};
use tokio::sync::{mpsc as tmpsc, watch};
use tokio_tungstenite::tungstenite::Message;

use polarimeter_core::engine::{
    run_stream, Engine, EngineConfig, EngineError, Envelope, LoggedCommand, RunOptions,
    RunSummary, SourceState,
};
use polarimeter_core::wire::{Ack, CaptureWriter, Hello, WireCommand, WireFrame};

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub addr: SocketAddr,
    pub engine: EngineConfig,
    pub source: SourceState,
    /// Write the session to this capture file.
    pub capture: Option<PathBuf>,
    /// Frames buffered per client before the oldest are dropped.
    pub client_buffer: usize,
    pub max_records: Option<u64>,
    /// Replay mode: apply these commands on schedule and refuse commands
    /// from clients.
    pub script: Option<Vec<LoggedCommand>>,
    /// Do not start the engine until the first client has connected, so
    /// that client sees every frame.
    pub hold_until_client: bool,
}

impl ServiceOptions {
    pub fn new(addr: SocketAddr, engine: EngineConfig, source: SourceState) -> Self {
        Self {
            addr,
            engine,
            source,
            capture: None,
            client_buffer: 64,
            max_records: None,
            script: None,
            hold_until_client: false,
        }
    }
}

#[derive(Debug)]
pub enum ServiceError {
    Engine(EngineError),
    Io(std::io::Error),
}

impl std::fmt::Display for ServiceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Engine(e) => write!(f, "{e}"),
            Self::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ServiceError {}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

/// A frame as published to clients, encoded once.
#[derive(Debug)]
struct Published {
    frame: WireFrame,
    text: String,
}

/// A running service. Dropping it does not stop it; call
/// [`Service::shutdown`].
pub struct Service {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    engine: Option<JoinHandle<std::io::Result<RunSummary>>>,
    closed: watch::Sender<bool>,
    accept: tokio::task::JoinHandle<()>,
}

impl Service {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// True once the engine loop has ended (record limit reached).
    pub fn is_finished(&self) -> bool {
        self.engine.as_ref().is_none_or(|h| h.is_finished())
    }

    /// Stops the engine, flushes the capture and closes all connections.
    pub async fn shutdown(mut self) -> Result<RunSummary, ServiceError> {
        self.stop.store(true, Ordering::Relaxed);
        // releases an engine still held for its first client
        self.accept.abort();
        let handle = self.engine.take().expect("joined once");
        let summary = tokio::task::spawn_blocking(move || handle.join())
            .await
            .expect("join task")
            .expect("engine thread panicked")?;
        let _ = self.closed.send(true);
        Ok(summary)
    }

    /// Waits for the engine to reach its record limit, then shuts down.
    pub async fn wait(self) -> Result<RunSummary, ServiceError> {
        while !self.is_finished() {
            tokio::time::sleep(std::time::Duration::from_millis(20)).await;
        }
        self.shutdown().await
    }
}

pub async fn start(options: ServiceOptions) -> Result<Service, ServiceError> {
    let engine = Engine::new(options.engine.clone(), options.source).map_err(ServiceError::Engine)?;
    let listener = TcpListener::bind(options.addr).await?;
    let local_addr = listener.local_addr()?;
    let (frames_tx, _) = broadcast::channel::<Arc<Published>>(options.client_buffer.max(1));
    let (cmd_tx, cmd_rx) = mpsc::channel::<Envelope>();
    let stop = Arc::new(AtomicBool::new(false));
    let (closed_tx, closed_rx) = watch::channel(false);

    let capture = match &options.capture {
        Some(path) => Some(CaptureWriter::new(
            BufWriter::new(File::create(path)?),
            &options.engine,
            &options.source,
        )?),
        None => None,
    };
    let run = RunOptions {
        max_frames: None,
        max_records: options.max_records,
        stop: Some(stop.clone()),
        script: options.script.clone().unwrap_or_default(),
    };
    // the accept loop only holds a weak handle so receivers see `Closed`
    // once the engine thread drops the publisher
    let subscriptions = frames_tx.downgrade();
    let publisher = frames_tx;
    let (go_tx, go_rx) = mpsc::channel::<()>();
    if !options.hold_until_client {
        let _ = go_tx.send(());
    }
    let engine_thread = std::thread::Builder::new()
        .name("polarimeter-engine".into())
        .spawn(move || {
            // a dropped sender (shutdown before any client) also releases
            let _ = go_rx.recv();
            engine_loop(engine, cmd_rx, run, publisher, capture)
        })?;

    let hello = Hello::new(&options.engine, &options.source).encode();
    let read_only = options.script.is_some();
    let accept = tokio::spawn(async move {
        let mut go = Some(go_tx);
        loop {
            let (stream, peer) = match listener.accept().await {
                Ok(c) => c,
                Err(e) => {
                    warn!("accept failed: {e}");
                    continue;
                }
            };
            let frames = match subscriptions.upgrade() {
                Some(tx) => tx.subscribe(),
                None => broadcast::channel(1).1,
            };
            let session = Session {
                frames,
                commands: cmd_tx.clone(),
                hello: hello.clone(),
                read_only,
                closed: closed_rx.clone(),
            };
            if let Some(go) = go.take() {
                let _ = go.send(());
            }
            tokio::spawn(async move {
                if let Err(e) = session.run(stream).await {
                    debug!("client {peer}: {e}");
                }
                debug!("client {peer} disconnected");
            });
        }
    });
    info!("listening on ws://{local_addr}");
    Ok(Service {
        local_addr,
        stop,
        engine: Some(engine_thread),
        closed: closed_tx,
        accept,
    })
}

fn engine_loop(
    mut engine: Engine,
    commands: mpsc::Receiver<Envelope>,
    run: RunOptions,
    publisher: broadcast::Sender<Arc<Published>>,
    mut capture: Option<CaptureWriter<BufWriter<File>>>,
) -> std::io::Result<RunSummary> {
    let mut logged = 0;
    let mut io_error = None;
    let summary = run_stream(&mut engine, &commands, &run, |frame, engine| {
        let wire = WireFrame::from_frame(frame);
        // legalization happens upstream; this is the last line of defence
        if let Err(e) = wire.validate() {
            warn!("dropping invalid frame {}: {e}", frame.seq);
            return ControlFlow::Continue(());
        }
        if let Some(writer) = capture.as_mut() {
            let log = engine.command_log();
            let result = log[logged..]
                .iter()
                .try_for_each(|c| writer.command(c))
                .and_then(|_| writer.frame(&wire));
            logged = log.len();
            if let Err(e) = result {
                io_error = Some(e);
                return ControlFlow::Break(());
            }
        }
        let text = wire.encode();
        // no receivers is fine
        let _ = publisher.send(Arc::new(Published { frame: wire, text }));
        ControlFlow::Continue(())
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    if let Some(mut writer) = capture {
        for c in &engine.command_log()[logged..] {
            writer.command(c)?;
        }
        writer.finish(engine.records_simulated())?;
    }
    Ok(summary)
}

struct Session {
    frames: broadcast::Receiver<Arc<Published>>,
    commands: mpsc::Sender<Envelope>,
    hello: String,
    read_only: bool,
    closed: watch::Receiver<bool>,
}

impl Session {
    async fn run(mut self, stream: TcpStream) -> Result<(), tokio_tungstenite::tungstenite::Error> {
        let _ = stream.set_nodelay(true);
        let ws = tokio_tungstenite::accept_async(stream).await?;
        let (mut tx, mut rx) = ws.split();
        tx.send(Message::text(self.hello.clone())).await?;
        let (ack_tx, mut ack_rx) = tmpsc::unbounded_channel::<Ack>();
        let mut dropped: u64 = 0;
        loop {
            tokio::select! {
                biased;
                _ = self.closed.changed() => {
                    let _ = tx.send(Message::Close(None)).await;
                    return Ok(());
                }
                Some(ack) = ack_rx.recv() => {
                    tx.send(Message::text(ack.encode())).await?;
                }
                incoming = rx.next() => match incoming {
                    None => return Ok(()),
                    Some(Err(e)) => return Err(e),
                    Some(Ok(Message::Text(text))) => self.handle_command(text.as_str(), &ack_tx),
                    Some(Ok(Message::Binary(_))) => {
                        let _ = ack_tx.send(Ack::rejected(None, "binary messages are not supported"));
                    }
                    Some(Ok(Message::Close(_))) => return Ok(()),
                    Some(Ok(_)) => {}
                },
                frame = self.frames.recv() => match frame {
                    Ok(published) => {
                        let text = if dropped > 0 {
                            let mut f = published.frame.clone();
                            f.flags.push(format!("dropped:{dropped}"));
                            dropped = 0;
                            f.encode()
                        } else {
                            published.text.clone()
                        };
                        tx.send(Message::text(text)).await?;
                    }
                    Err(RecvError::Lagged(n)) => dropped += n,
                    Err(RecvError::Closed) => {
                        // engine finished; deliver pending acks, then close
                        while let Ok(ack) = ack_rx.try_recv() {
                            tx.send(Message::text(ack.encode())).await?;
                        }
                        let _ = tx.send(Message::Close(None)).await;
                        return Ok(());
                    }
                },
            }
        }
    }

    fn handle_command(&self, text: &str, acks: &tmpsc::UnboundedSender<Ack>) {
        let cmd = match WireCommand::decode(text) {
            Ok(cmd) => cmd,
            Err(e) => {
                let _ = acks.send(Ack::rejected(e.req_id, e.message));
                return;
            }
        };
        if self.read_only {
            let _ = acks.send(Ack::rejected(
                Some(cmd.req_id),
                "replay sessions do not accept commands",
            ));
            return;
        }
        let req_id = cmd.req_id.clone();
        let reply_to = acks.clone();
        let envelope = Envelope::with_reply(cmd.command, move |result| {
            let ack = match result {
                Ok(seq) => Ack::applied(req_id, seq),
                Err(e) => Ack::rejected(Some(req_id), e),
            };
            let _ = reply_to.send(ack);
        });
        if self.commands.send(envelope).is_err() {
            let _ = acks.send(Ack::rejected(Some(cmd.req_id), "engine has stopped"));
        }
    }
}
