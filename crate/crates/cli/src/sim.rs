use std::io::Write;
use std::net::SocketAddr;
use std::time::Duration;

use anyhow::{Context, Result};
use clustertone_core::clustersim::{SimConfig, Simulator};
use clustertone_core::protocol::encode_batch;
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;
use tokio::time::Instant;

/// Streams `batches` simulator batches to an ingestion socket, one every
/// `pace` (back to back when `None`). Returns the number sent.
pub async fn stream_simulator(addr: SocketAddr, cfg: SimConfig, batches: u64, pace: Option<Duration>) -> Result<u64> {
    let mut sim = Simulator::new(cfg)?;
    let mut stream = TcpStream::connect(addr)
        .await
        .with_context(|| format!("connecting to {addr}"))?;
    stream.set_nodelay(true)?;
    let start = Instant::now();
    for k in 0..batches {
        if let Some(p) = pace {
            tokio::time::sleep_until(start + p * k as u32).await;
        }
        let mut line = encode_batch(&sim.step());
        line.push('\n');
        stream.write_all(line.as_bytes()).await?;
    }
    stream.flush().await?;
    stream.shutdown().await?;
    Ok(batches)
}

pub fn write_simulator_log<W: Write>(mut w: W, cfg: SimConfig, batches: u64) -> Result<()> {
    let sim = Simulator::new(cfg)?;
    for batch in sim.take(batches as usize) {
        writeln!(w, "{}", encode_batch(&batch))?;
    }
    w.flush()?;
    Ok(())
}
