//! Synthetic cluster telemetry producer.

use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Result};
use clap::Parser;
use clustertone::sim::{stream_simulator, write_simulator_log};
use clustertone_core::clustersim::SimConfig;
use clustertone_core::Config;

#[derive(Debug, Parser)]
#[command(name = "clustersim", version)]
struct Args {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seconds between batches.
    #[arg(long, default_value_t = 15.0)]
    interval: f64,
    /// Number of batches to emit.
    #[arg(long, conflicts_with = "duration")]
    batches: Option<u64>,
    /// Simulated seconds to cover (converted to whole batches).
    #[arg(long)]
    duration: Option<f64>,
    /// Send faster than real time by this factor (socket output only).
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Stream to an ingestion socket.
    #[arg(long, conflicts_with = "out")]
    connect: Option<SocketAddr>,
    /// Write a log file instead ("-" for stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Take the partition table from this engine config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Timestamp of the first batch (Unix seconds).
    #[arg(long, default_value_t = 0.0)]
    start_ts: f64,
}

#[tokio::main]
async fn main() -> Result<()> {
    let args = Args::parse();
    let mut cfg = SimConfig {
        seed: args.seed,
        batch_interval: args.interval,
        start_ts: args.start_ts,
        ..SimConfig::default()
    };
    if let Some(p) = &args.config {
        cfg.table = Config::load(p)?.table()?;
    }
    let batches = match (args.batches, args.duration) {
        (Some(n), _) => n,
        (None, Some(d)) => (d / args.interval).round() as u64,
        (None, None) => 40,
    };
    if let Some(addr) = args.connect {
        if args.speed.is_nan() || args.speed <= 0.0 {
            bail!("--speed must be positive");
        }
        let pace = Duration::from_secs_f64(args.interval / args.speed);
        stream_simulator(addr, cfg, batches, Some(pace)).await?;
        return Ok(());
    }
    match args.out.as_deref() {
        Some(p) if p.as_os_str() != "-" => write_simulator_log(BufWriter::new(File::create(p)?), cfg, batches),
        _ => write_simulator_log(std::io::stdout().lock(), cfg, batches),
    }
}
