//! Task wiring shared by live and replay modes.
//!
//! One engine task owns the ingestor, the engine and the audio sink. Metric
//! lines and operator commands reach it over channels, so every state
//! change happens in one place and status broadcasts leave in version order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use anyhow::{Context, Result};
use clustertone_core::audio::{default_sources, BatchTimeline, LivePlayer, Mixer, PlayerQueues, SampleBuffer};
use clustertone_core::control::{self, error_json, Reply, StatusMessage};
use clustertone_core::protocol::{IngestStats, Ingestor};
use clustertone_core::render::{write_event_log, BatchRenderer};
use clustertone_core::{Config, Engine, PerLayer, ScheduledBatch};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tracing::{debug, info, warn};

use crate::audio_thread::{AudioReport, AudioThread};
use crate::{control_server, ingest};

const LINE_QUEUE: usize = 1024;
const COMMAND_QUEUE: usize = 256;
const STATUS_QUEUE: usize = 256;

/// What happens to scheduled audio.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AudioOutput {
    /// Paced real-time player on its own thread.
    Realtime,
    /// Each batch rendered as soon as it is scheduled, optionally to a WAV.
    Offline { wav: Option<PathBuf> },
    Disabled,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: Config,
    /// Ingestion socket; `None` when lines come from [`Runtime::feed`].
    pub listen: Option<SocketAddr>,
    pub control: Option<SocketAddr>,
    pub serve_ui: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub audio: AudioOutput,
}

impl RunOptions {
    pub fn new(config: Config) -> Self {
        Self {
            config,
            listen: None,
            control: None,
            serve_ui: None,
            events: None,
            audio: AudioOutput::Disabled,
        }
    }
}

/// A raw command line and where to send the reply line.
pub struct CommandRequest {
    pub raw: String,
    pub reply: oneshot::Sender<String>,
}

/// Live counters readable while running.
#[derive(Debug, Default)]
pub struct RunCounters {
    pub lines: AtomicU64,
    pub batches: AtomicU64,
    pub rejected: AtomicU64,
    pub commands: AtomicU64,
    pub broadcasts: AtomicU64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub batches: u64,
    pub lines: u64,
    pub ingest: IngestStats,
    pub broadcasts: u64,
    pub final_state: StatusMessage,
    pub audio: Option<AudioReport>,
    pub rendered_frames: u64,
}

enum Sink {
    Realtime { queues: PlayerQueues, sample_rate: u32 },
    Offline {
        renderer: Box<BatchRenderer>,
        wav: Option<hound::WavWriter<BufWriter<File>>>,
        frames: u64,
    },
    Null,
}

impl Sink {
    fn batch(&mut self, batch: &ScheduledBatch) -> Result<()> {
        match self {
            Sink::Realtime { queues, sample_rate } => {
                if !queues.send(BatchTimeline::new(batch, *sample_rate)) {
                    debug!(index = batch.index, "superseded a timeline the player had not taken yet");
                }
            }
            Sink::Offline { renderer, wav, frames } => {
                let audio = renderer.render(batch);
                *frames += audio.len() as u64;
                if let Some(w) = wav {
                    let full = ((1i64 << (w.spec().bits_per_sample - 1)) - 1) as f32;
                    for &s in audio {
                        w.write_sample((s * full).round() as i32)?;
                    }
                }
            }
            Sink::Null => {}
        }
        Ok(())
    }

    fn reschedule(&mut self, batch: &ScheduledBatch) {
        // Offline audio for the batch is already rendered; the change is
        // heard from the next batch.
        if let Sink::Realtime { .. } = self {
            let _ = self.batch(batch);
        }
    }

    fn finish(self) -> Result<u64> {
        match self {
            Sink::Offline { wav, frames, .. } => {
                if let Some(w) = wav {
                    w.finalize()?;
                }
                Ok(frames)
            }
            _ => Ok(0),
        }
    }
}

struct EngineTask {
    engine: Engine,
    ingestor: Ingestor,
    sink: Sink,
    events: Option<BufWriter<File>>,
    status: broadcast::Sender<Arc<str>>,
    counters: Arc<RunCounters>,
}

impl EngineTask {
    fn broadcast(&self) {
        self.counters.broadcasts.fetch_add(1, Ordering::Relaxed);
        let _ = self.status.send(self.engine.snapshot().to_json().into());
    }

    fn on_line(&mut self, line: &[u8]) -> Result<()> {
        self.counters.lines.fetch_add(1, Ordering::Relaxed);
        if line.trim_ascii().is_empty() {
            return Ok(());
        }
        let batch = match self.ingestor.ingest_line(line) {
            Ok(b) => b,
            Err(e) => {
                self.counters.rejected.fetch_add(1, Ordering::Relaxed);
                warn!("rejected metrics message: {e}");
                return Ok(());
            }
        };
        if batch.restarted {
            info!(seq = batch.seq, "producer restarted; smoothing reset");
        }
        let transport = self.engine.config().transport;
        let scheduled = self.engine.process(&batch);
        if let Some(w) = &mut self.events {
            let records: Vec<_> = scheduled.records(&transport).collect();
            write_event_log(&mut *w, &records)?;
        }
        debug!(index = scheduled.index, seq = scheduled.seq, events = scheduled.events.len(), "batch scheduled");
        self.sink.batch(scheduled)?;
        self.counters.batches.fetch_add(1, Ordering::Relaxed);
        self.broadcast();
        Ok(())
    }

    fn on_command(&mut self, raw: &str) -> String {
        self.counters.commands.fetch_add(1, Ordering::Relaxed);
        let cmd = match control::parse_command(raw.as_bytes()) {
            Ok(c) => c,
            Err(e) => return error_json(&e),
        };
        match self.engine.apply_command(&cmd) {
            Err(e) => error_json(&e),
            Ok((reply, rescheduled)) => {
                if let Some(batch) = rescheduled {
                    let batch = batch.clone();
                    self.sink.reschedule(&batch);
                }
                let changed = matches!(&reply, Reply::Ack(a) if a.changed);
                let text = reply.to_json();
                if changed {
                    info!(cmd = cmd.name(), version = self.engine.state().version, "state changed");
                    self.broadcast();
                }
                text
            }
        }
    }

    async fn run(
        mut self,
        mut lines: mpsc::Receiver<Vec<u8>>,
        mut commands: mpsc::Receiver<CommandRequest>,
    ) -> Result<(Engine, Ingestor, Sink)> {
        loop {
            tokio::select! {
                biased;
                Some(req) = commands.recv() => {
                    let reply = self.on_command(&req.raw);
                    let _ = req.reply.send(reply);
                }
                line = lines.recv() => match line {
                    Some(l) => self.on_line(&l)?,
                    None => break,
                },
            }
        }
        if let Some(w) = &mut self.events {
            w.flush()?;
        }
        Ok((self.engine, self.ingestor, self.sink))
    }
}

/// Handle to a running engine.
pub struct Runtime {
    pub ingest_addr: Option<SocketAddr>,
    pub control_addr: Option<SocketAddr>,
    lines: Option<mpsc::Sender<Vec<u8>>>,
    commands: mpsc::Sender<CommandRequest>,
    status: broadcast::Sender<Arc<str>>,
    counters: Arc<RunCounters>,
    shutdown: watch::Sender<bool>,
    engine_task: JoinHandle<Result<(Engine, Ingestor, Sink)>>,
    ingest_task: Option<JoinHandle<()>>,
    control_task: Option<JoinHandle<()>>,
    audio: Option<AudioThread>,
}

fn open_wav(path: &PathBuf, config: &Config) -> Result<hound::WavWriter<BufWriter<File>>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: config.audio.sample_rate,
        bits_per_sample: config.audio.bit_depth,
        sample_format: hound::SampleFormat::Int,
    };
    hound::WavWriter::create(path, spec).with_context(|| format!("creating {}", path.display()))
}

pub fn load_samples(config: &Config) -> Result<PerLayer<Option<SampleBuffer>>> {
    Ok(config.load_samples()?)
}

impl Runtime {
    /// Starts the engine, audio, ingestion and control, in that order.
    pub async fn start(opts: RunOptions) -> Result<Self> {
        let config = opts.config;
        config.validate()?;
        let samples = load_samples(&config)?;
        let engine_cfg = config.engine_config();
        let transport = engine_cfg.transport;
        let engine = Engine::new(engine_cfg.clone());
        let ingestor = Ingestor::new(engine_cfg.table.clone());

        let mut audio = None;
        let sink = match &opts.audio {
            AudioOutput::Realtime => {
                let queues = PlayerQueues::new();
                let sr = config.audio.sample_rate;
                let mixer = Mixer::new(config.audio, &transport, default_sources(sr, &samples));
                let player = LivePlayer::new(mixer, &transport, queues.clone());
                audio = Some(AudioThread::spawn(player, config.audio.block_size, sr)?);
                Sink::Realtime { queues, sample_rate: sr }
            }
            AudioOutput::Offline { wav } => Sink::Offline {
                renderer: Box::new(BatchRenderer::new(&config, &samples)),
                wav: wav.as_ref().map(|p| open_wav(p, &config)).transpose()?,
                frames: 0,
            },
            AudioOutput::Disabled => Sink::Null,
        };
        let events = match &opts.events {
            Some(p) => Some(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            )),
            None => None,
        };

        let (line_tx, line_rx) = mpsc::channel(LINE_QUEUE);
        let (cmd_tx, cmd_rx) = mpsc::channel(COMMAND_QUEUE);
        let (status_tx, _) = broadcast::channel(STATUS_QUEUE);
        let (shutdown_tx, shutdown_rx) = watch::channel(false);
        let counters = Arc::new(RunCounters::default());

        let task = EngineTask {
            engine,
            ingestor,
            sink,
            events,
            status: status_tx.clone(),
            counters: counters.clone(),
        };
        let engine_task = tokio::spawn(task.run(line_rx, cmd_rx));

        let (ingest_addr, ingest_task) = match opts.listen {
            Some(addr) => {
                let listener = TcpListener::bind(addr)
                    .await
                    .with_context(|| format!("binding ingestion socket {addr}"))?;
                let bound = listener.local_addr()?;
                info!("ingesting metrics on {bound}");
                let task = tokio::spawn(ingest::serve(listener, line_tx.clone(), shutdown_rx.clone()));
                (Some(bound), Some(task))
            }
            None => (None, None),
        };

        let (control_addr, control_task) = match opts.control {
            Some(addr) => {
                let listener = TcpListener::bind(addr)
                    .await
                    .with_context(|| format!("binding control socket {addr}"))?;
                let bound = listener.local_addr()?;
                info!("control on {bound} (line protocol, ws://{bound}/control)");
                if let Some(dir) = &opts.serve_ui {
                    info!("serving UI from {} at http://{bound}/", dir.display());
                }
                let ctx = control_server::ControlContext::new(cmd_tx.clone(), status_tx.clone());
                let router = control_server::router(ctx.clone(), opts.serve_ui.clone());
                let task = tokio::spawn(control_server::serve(listener, ctx, router, shutdown_rx.clone()));
                (Some(bound), Some(task))
            }
            None => (None, None),
        };

        Ok(Self {
            ingest_addr,
            control_addr,
            lines: Some(line_tx),
            commands: cmd_tx,
            status: status_tx,
            counters,
            shutdown: shutdown_tx,
            engine_task,
            ingest_task,
            control_task,
            audio,
        })
    }

    pub fn counters(&self) -> &RunCounters {
        &self.counters
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<str>> {
        self.status.subscribe()
    }

    /// Hands one metrics line to the engine, waiting if it is behind.
    pub async fn feed(&self, line: impl Into<Vec<u8>>) -> Result<()> {
        let tx = self.lines.as_ref().context("runtime is shutting down")?;
        tx.send(line.into()).await.ok().context("engine task stopped")
    }

    /// Sends one command line and waits for the reply line.
    pub async fn command(&self, raw: &str) -> Result<String> {
        control_server::request(&self.commands, raw.to_string()).await
    }

    pub fn audio_report(&self) -> Option<AudioReport> {
        self.audio.as_ref().map(|a| a.report())
    }

    /// Stops control first, then ingestion, lets the engine drain queued
    /// lines, and stops audio last.
    pub async fn shutdown(mut self) -> Result<RunSummary> {
        let _ = self.shutdown.send(true);
        if let Some(t) = self.control_task.take() {
            let _ = t.await;
        }
        if let Some(t) = self.ingest_task.take() {
            let _ = t.await;
        }
        self.lines = None;
        let (engine, ingestor, sink) = self.engine_task.await.context("engine task panicked")??;
        let rendered_frames = sink.finish()?;
        let audio = self.audio.take().map(|a| a.stop());
        Ok(RunSummary {
            batches: engine.batches_processed(),
            lines: self.counters.lines.load(Ordering::Relaxed),
            ingest: ingestor.stats(),
            broadcasts: self.counters.broadcasts.load(Ordering::Relaxed),
            final_state: engine.snapshot(),
            audio,
            rendered_frames,
        })
    }
}
