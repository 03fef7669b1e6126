use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use clustertone::{run_live, run_render, run_replay, AudioOutput, RunOptions, RunSummary};
use clustertone_core::Config;
use tracing::{error, info};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Live,
    Replay,
    Render,
}

/// Sonify cluster telemetry as layered electronic music.
#[derive(Debug, Parser)]
#[command(name = "clustertone", version)]
struct Args {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Live)]
    mode: Mode,
    /// Metrics log (one batch message per line) for replay and render.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replay speed factor.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Audio output file (WAV).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Event log output file (one JSON object per event).
    #[arg(long)]
    events: Option<PathBuf>,
    /// Metrics ingestion address.
    #[arg(long)]
    listen: Option<SocketAddr>,
    /// Control socket address.
    #[arg(long)]
    control: Option<SocketAddr>,
    /// Serve the web UI from this directory on the control port.
    #[arg(long)]
    serve_ui: Option<PathBuf>,
    /// Moving-window length for process counts, in batches.
    #[arg(long)]
    window_procs: Option<usize>,
    /// Moving-window length for InfiniBand traffic, in batches.
    #[arg(long)]
    window_ibtx: Option<usize>,
    /// Rescale from the window minimum instead of zero.
    #[arg(long)]
    zoom: bool,
}

fn load_config(args: &Args) -> Result<Config> {
    let mut cfg = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.window_procs {
        cfg.window.procs = n;
    }
    if let Some(n) = args.window_ibtx {
        cfg.window.ibtx = n;
    }
    if args.zoom {
        cfg.window.zoom = true;
    }
    if let Some(a) = args.listen {
        cfg.network.listen = a.to_string();
    }
    if let Some(a) = args.control {
        cfg.network.control = a.to_string();
    }
    if let Some(dir) = &args.serve_ui {
        cfg.network.serve_ui = Some(dir.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_options(cfg: Config, args: &Args, listen: bool) -> Result<RunOptions> {
    let mut opts = RunOptions::new(cfg.clone());
    if listen {
        opts.listen = Some(cfg.network.listen.parse().context("network.listen")?);
    }
    opts.control = Some(cfg.network.control.parse().context("network.control")?);
    opts.serve_ui = cfg.network.serve_ui.clone();
    opts.events = args.events.clone();
    opts.audio = match &args.out {
        Some(p) if args.mode == Mode::Replay => AudioOutput::Offline { wav: Some(p.clone()) },
        _ => AudioOutput::Realtime,
    };
    Ok(opts)
}

fn report(summary: &RunSummary) {
    info!(
        batches = summary.batches,
        accepted = summary.ingest.accepted,
        rejected = summary.ingest.rejected,
        version = summary.final_state.version,
        "stopped"
    );
    if let Some(a) = &summary.audio {
        info!(
            blocks = a.blocks,
            underruns = a.underruns,
            max_block_us = a.max_block.as_micros() as u64,
            period_us = a.period.as_micros() as u64,
            "audio"
        );
    }
}

async fn run(args: Args) -> Result<()> {
    let cfg = load_config(&args)?;
    match args.mode {
        Mode::Render => {
            let log = args.log.as_deref().context("--mode render needs --log")?;
            let out = args.out.clone().unwrap_or_else(|| cfg.output.audio.clone());
            let events = args.events.clone().unwrap_or_else(|| cfg.output.events.clone());
            let r = run_render(&cfg, log, Some(&out), Some(&events))?;
            info!(
                batches = r.batches.len(),
                seconds = r.duration(),
                events = r.events.len(),
                limiter = r.mixer.limiter_hits,
                "rendered {} and {}",
                out.display(),
                events.display()
            );
        }
        Mode::Replay => {
            let log = args.log.clone().context("--mode replay needs --log")?;
            let opts = run_options(cfg, &args, false)?;
            report(&run_replay(opts, &log, args.speed).await?);
        }
        Mode::Live => {
            let opts = run_options(cfg, &args, true)?;
            report(&run_live(opts).await?);
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Args::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
