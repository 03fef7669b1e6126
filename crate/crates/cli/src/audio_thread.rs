//! Real-time render thread.
//!
//! Renders one block per block period against a monotonic deadline. There
//! is no device here: the thread plays into a null sink, which keeps the
//! render timing and underrun accounting identical to a device callback
//! without buffering slack. Like an audio server callback, the thread asks
//! for real-time scheduling and carries on at normal priority if refused.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use clustertone_core::audio::{LivePlayer, MixerStats, PlayerStats};

/// SCHED_FIFO priority for render threads; above ordinary work, below the
/// kernel's own real-time threads.
const REALTIME_PRIORITY: i32 = 40;

/// Moves the calling thread to SCHED_FIFO. Returns false when the system
/// refuses (no privilege, or real-time limits).
pub fn promote_current_thread() -> bool {
    #[cfg(target_os = "linux")]
    {
        let param = libc::sched_param {
            sched_priority: REALTIME_PRIORITY,
        };
        // SAFETY: plain syscall wrapper on the current thread's handle.
        unsafe { libc::pthread_setschedparam(libc::pthread_self(), libc::SCHED_FIFO, &param) == 0 }
    }
    #[cfg(not(target_os = "linux"))]
    {
        false
    }
}

#[derive(Debug, Default)]
struct Counters {
    realtime: AtomicBool,
    blocks: AtomicU64,
    underruns: AtomicU64,
    max_block_ns: AtomicU64,
    total_render_ns: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AudioReport {
    pub blocks: u64,
    /// Blocks not ready by their deadline.
    pub underruns: u64,
    pub max_block: Duration,
    pub mean_block: Duration,
    pub period: Duration,
    /// The thread got real-time scheduling.
    pub realtime: bool,
    pub mixer: Option<MixerStats>,
    pub player: Option<PlayerStats>,
}

pub struct AudioThread {
    stop: Arc<AtomicBool>,
    counters: Arc<Counters>,
    period: Duration,
    handle: JoinHandle<LivePlayer>,
}

impl AudioThread {
    pub fn spawn(mut player: LivePlayer, block_size: usize, sample_rate: u32) -> Result<Self> {
        let stop = Arc::new(AtomicBool::new(false));
        let counters = Arc::new(Counters::default());
        let period = Duration::from_secs_f64(block_size as f64 / sample_rate as f64);
        let (s, c) = (stop.clone(), counters.clone());
        let handle = std::thread::Builder::new()
            .name("audio".into())
            .spawn(move || {
                let rt = promote_current_thread();
                if !rt {
                    tracing::warn!("real-time scheduling refused; audio runs at normal priority");
                }
                c.realtime.store(rt, Ordering::Relaxed);
                let mut block = vec![0.0f32; block_size];
                let mut deadline = Instant::now() + period;
                while !s.load(Ordering::Relaxed) {
                    let t0 = Instant::now();
                    player.process(&mut block);
                    let done = Instant::now();
                    let ns = (done - t0).as_nanos() as u64;
                    c.blocks.fetch_add(1, Ordering::Relaxed);
                    c.total_render_ns.fetch_add(ns, Ordering::Relaxed);
                    c.max_block_ns.fetch_max(ns, Ordering::Relaxed);
                    if done > deadline {
                        c.underruns.fetch_add(1, Ordering::Relaxed);
                        // Resynchronize instead of racing to catch up.
                        deadline = done;
                    } else {
                        std::thread::sleep(deadline - done);
                    }
                    deadline += period;
                }
                player
            })
            .context("spawning audio thread")?;
        Ok(Self {
            stop,
            counters,
            period,
            handle,
        })
    }

    pub fn report(&self) -> AudioReport {
        snapshot(&self.counters, self.period)
    }

    /// Stops the thread and reports, including the player's own counters.
    pub fn stop(self) -> AudioReport {
        self.stop.store(true, Ordering::Relaxed);
        let player = self.handle.join().ok();
        AudioReport {
            mixer: player.as_ref().map(|p| p.mixer().stats()),
            player: player.as_ref().map(|p| p.stats()),
            ..snapshot(&self.counters, self.period)
        }
    }
}

fn snapshot(c: &Counters, period: Duration) -> AudioReport {
    let blocks = c.blocks.load(Ordering::Relaxed);
    let total = c.total_render_ns.load(Ordering::Relaxed);
    AudioReport {
        blocks,
        underruns: c.underruns.load(Ordering::Relaxed),
        max_block: Duration::from_nanos(c.max_block_ns.load(Ordering::Relaxed)),
        mean_block: Duration::from_nanos(total.checked_div(blocks).unwrap_or(0)),
        period,
        realtime: c.realtime.load(Ordering::Relaxed),
        mixer: None,
        player: None,
    }
}
