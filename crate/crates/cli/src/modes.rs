use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clustertone_core::protocol::Batch;
use clustertone_core::render::{write_event_log, write_wav};
use clustertone_core::{render_offline, Config, OfflineRender, RenderOptions};
use tokio::time::Instant;
use tracing::info;

use crate::runtime::{load_samples, AudioOutput, RunOptions, RunSummary, Runtime};

/// Runs until interrupted.
pub async fn run_live(opts: RunOptions) -> Result<RunSummary> {
    let rt = Runtime::start(opts).await?;
    info!("waiting for metrics; interrupt to stop");
    tokio::signal::ctrl_c().await.context("waiting for interrupt")?;
    info!("shutting down");
    rt.shutdown().await
}

/// Reads a metrics log, failing on the first line that is not a batch.
pub fn read_log(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading log {}", path.display()))?;
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if let Err(e) = serde_json::from_str::<Batch>(line) {
            bail!("log line {}: {e}", i + 1);
        }
        lines.push(line.to_string());
    }
    Ok(lines)
}

/// Feeds a log through the live pipeline, one batch per
/// `batch_interval / speed`. At speed 1 audio plays in real time; at any
/// other speed each batch is rendered offline with its musical timing
/// intact.
pub async fn run_replay(mut opts: RunOptions, log: &Path, speed: f64) -> Result<RunSummary> {
    if !(speed.is_finite() && speed > 0.0) {
        bail!("--speed must be a positive number, got {speed}");
    }
    let lines = read_log(log)?;
    if opts.audio == AudioOutput::Realtime && speed != 1.0 {
        opts.audio = AudioOutput::Offline { wav: None };
    }
    let pace = Duration::from_secs_f64(opts.config.batch_interval / speed);
    let rt = Runtime::start(opts).await?;
    info!(batches = lines.len(), ?pace, "replaying {}", log.display());
    let start = Instant::now();
    for (k, line) in lines.iter().enumerate() {
        tokio::time::sleep_until(start + pace * k as u32).await;
        rt.feed(line.as_bytes()).await?;
    }
    // Let the last batch play out.
    tokio::time::sleep_until(start + pace * lines.len() as u32).await;
    rt.shutdown().await
}

pub fn run_render(config: &Config, log: &Path, out: Option<&Path>, events: Option<&Path>) -> Result<OfflineRender> {
    let file = File::open(log).with_context(|| format!("opening log {}", log.display()))?;
    let samples = load_samples(config)?;
    let opts = RenderOptions {
        skip_audio: out.is_none(),
        ..RenderOptions::default()
    };
    let render = render_offline(BufReader::new(file), config, samples, opts)?;
    if let Some(path) = out {
        write_wav(path, &render.samples, render.sample_rate, config.audio.bit_depth)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = events {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_event_log(BufWriter::new(f), &render.events)?;
    }
    Ok(render)
}
