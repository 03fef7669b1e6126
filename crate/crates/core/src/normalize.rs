//! Moving-window max scaling of unbounded metrics into `[0, 1]`.
//!
//! Process counts and interconnect traffic have no useful fixed ceiling, so
//! each incoming value is divided by the largest value among the last `n`
//! batches (itself included). Memory usage is already a fraction and passes
//! through unchanged.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mapping::PartitionParams;
use crate::protocol::PartitionAggregate;

/// Window length used for the reference recordings.
pub const DEFAULT_WINDOW: usize = 8;

/// Batches per hour at the 15 s cadence; windows at least this long count as
/// long-term.
pub const LONG_TERM_THRESHOLD: usize = 240;

/// A scaled metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Procs,
    Ibtx,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Procs => "procs",
            Metric::Ibtx => "ibtx",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "procs" => Ok(Metric::Procs),
            "ibtx" => Ok(Metric::Ibtx),
            other => Err(format!("unknown scaled metric `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowMode {
    ShortTerm,
    LongTerm,
}

impl WindowMode {
    pub fn for_len(n: usize) -> Self {
        if n >= LONG_TERM_THRESHOLD {
            WindowMode::LongTerm
        } else {
            WindowMode::ShortTerm
        }
    }
}

/// Converts a wall-clock span into a window length at `batch_interval`
/// seconds per batch (4 batches per minute at the default cadence).
pub fn batches_for_seconds(seconds: f64, batch_interval: f64) -> usize {
    ((seconds / batch_interval).round() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("window length must be at least 1")]
pub struct ZeroWindow;

/// Fixed-capacity window over the most recent raw values, with O(1)
/// amortized max and min via monotonic queues.
#[derive(Debug, Clone)]
pub struct MovingWindow {
    capacity: usize,
    values: VecDeque<f64>,
    // (push index, value), values strictly decreasing front to back.
    maxima: VecDeque<(u64, f64)>,
    // (push index, value), values strictly increasing front to back.
    minima: VecDeque<(u64, f64)>,
    pushed: u64,
}

impl MovingWindow {
    pub fn new(capacity: usize) -> Result<Self, ZeroWindow> {
        if capacity == 0 {
            return Err(ZeroWindow);
        }
        Ok(Self {
            capacity,
            values: VecDeque::with_capacity(capacity.min(4096)),
            maxima: VecDeque::new(),
            minima: VecDeque::new(),
            pushed: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }

    /// Largest buffered value, 0 when empty.
    pub fn max(&self) -> f64 {
        self.maxima.front().map_or(0.0, |&(_, v)| v)
    }

    /// Smallest buffered value, 0 when empty.
    pub fn min(&self) -> f64 {
        self.minima.front().map_or(0.0, |&(_, v)| v)
    }

    pub fn push(&mut self, value: f64) {
        debug_assert!(value >= 0.0, "window values are non-negative");
        let index = self.pushed;
        self.pushed += 1;

        self.values.push_back(value);
        if self.values.len() > self.capacity {
            self.values.pop_front();
        }

        while self.maxima.back().is_some_and(|&(_, v)| v <= value) {
            self.maxima.pop_back();
        }
        self.maxima.push_back((index, value));
        while self.minima.back().is_some_and(|&(_, v)| v >= value) {
            self.minima.pop_back();
        }
        self.minima.push_back((index, value));

        let oldest = self.pushed.saturating_sub(self.capacity as u64);
        while self.maxima.front().is_some_and(|&(i, _)| i < oldest) {
            self.maxima.pop_front();
        }
        while self.minima.front().is_some_and(|&(i, _)| i < oldest) {
            self.minima.pop_front();
        }
    }

    /// Rescales `value` from `[0, max]` to `[0, 1]`, or from `[min, max]`
    /// when `zoom` is set. A zero maximum maps to 0.
    pub fn scale(&self, value: f64, zoom: bool) -> f64 {
        let max = self.max();
        if max <= 0.0 {
            return 0.0;
        }
        if zoom {
            let min = self.min();
            let span = max - min;
            if span > 0.0 {
                return ((value - min) / span).clamp(0.0, 1.0);
            }
        }
        (value / max).clamp(0.0, 1.0)
    }

    /// Appends `value`, evicting the oldest if full, and returns it scaled
    /// against the updated window.
    pub fn push_and_scale(&mut self, value: f64) -> f64 {
        self.push(value);
        self.scale(value, false)
    }

    /// Changes the capacity, keeping the most recent values.
    pub fn resize(&mut self, capacity: usize) -> Result<(), ZeroWindow> {
        let mut fresh = MovingWindow::new(capacity)?;
        let skip = self.values.len().saturating_sub(capacity);
        for v in self.values.iter().skip(skip) {
            fresh.push(*v);
        }
        *self = fresh;
        Ok(())
    }
}

/// Memory usage is already a fraction.
pub fn mem_passthrough(memusage: f64) -> f64 {
    memusage
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalerConfig {
    pub procs: usize,
    pub ibtx: usize,
    /// Rescale from the window minimum instead of zero.
    pub zoom: bool,
}

impl Default for ScalerConfig {
    fn default() -> Self {
        Self {
            procs: DEFAULT_WINDOW,
            ibtx: DEFAULT_WINDOW,
            zoom: false,
        }
    }
}

impl ScalerConfig {
    pub fn window(&self, metric: Metric) -> usize {
        match metric {
            Metric::Procs => self.procs,
            Metric::Ibtx => self.ibtx,
        }
    }

    pub fn mode(&self, metric: Metric) -> WindowMode {
        WindowMode::for_len(self.window(metric))
    }
}

/// One procs window and one traffic window per partition.
#[derive(Debug, Clone)]
pub struct Normalizer {
    config: ScalerConfig,
    windows: Vec<(MovingWindow, MovingWindow)>,
}

impl Normalizer {
    pub fn new(config: ScalerConfig, partitions: usize) -> Result<Self, ZeroWindow> {
        let pair = (MovingWindow::new(config.procs)?, MovingWindow::new(config.ibtx)?);
        Ok(Self {
            config,
            windows: vec![pair; partitions],
        })
    }

    pub fn config(&self) -> &ScalerConfig {
        &self.config
    }

    pub fn set_window(&mut self, metric: Metric, n: usize) -> Result<(), ZeroWindow> {
        if n == 0 {
            return Err(ZeroWindow);
        }
        for (procs, ibtx) in &mut self.windows {
            match metric {
                Metric::Procs => procs.resize(n)?,
                Metric::Ibtx => ibtx.resize(n)?,
            }
        }
        match metric {
            Metric::Procs => self.config.procs = n,
            Metric::Ibtx => self.config.ibtx = n,
        }
        Ok(())
    }

    /// Pushes one batch of partition aggregates (in table order) and returns
    /// the scaled parameters.
    pub fn scale(&mut self, aggregates: &[PartitionAggregate], seq: u64) -> Vec<PartitionParams> {
        debug_assert_eq!(aggregates.len(), self.windows.len());
        let zoom = self.config.zoom;
        aggregates
            .iter()
            .zip(self.windows.iter_mut())
            .map(|(agg, (procs_w, ibtx_w))| {
                procs_w.push(agg.procs);
                ibtx_w.push(agg.ibtx);
                PartitionParams {
                    partition: agg.partition.clone(),
                    layer: agg.layer,
                    scaled_procs: procs_w.scale(agg.procs, zoom),
                    memusage: mem_passthrough(agg.mem),
                    scaled_ibtx: ibtx_w.scale(agg.ibtx, zoom),
                    seq,
                }
            })
            .collect()
    }
}
