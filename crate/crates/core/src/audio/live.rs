//! Real-time playback side: takes batch timelines from a lock-free queue and
//! plays them on the pattern grid.

use std::sync::Arc;

use crossbeam_queue::ArrayQueue;

use super::mixer::{seconds_to_samples, BatchTimeline, Mixer};
use crate::sequencer::Transport;

pub const QUEUE_CAPACITY: usize = 16;

/// The two single-producer queues between the batch task and the audio
/// callback. Timelines go in through `inbox`; replaced ones come back
/// through `recycle` so the callback never frees memory.
#[derive(Debug, Clone)]
pub struct PlayerQueues {
    pub inbox: Arc<ArrayQueue<Box<BatchTimeline>>>,
    pub recycle: Arc<ArrayQueue<Box<BatchTimeline>>>,
}

impl PlayerQueues {
    pub fn new() -> Self {
        Self {
            inbox: Arc::new(ArrayQueue::new(QUEUE_CAPACITY)),
            recycle: Arc::new(ArrayQueue::new(QUEUE_CAPACITY * 2)),
        }
    }

    /// Hands a timeline to the player. When the inbox is full the oldest
    /// waiting timeline is dropped; a newer one supersedes it anyway.
    pub fn send(&self, timeline: BatchTimeline) -> bool {
        while self.recycle.pop().is_some() {}
        self.inbox.force_push(Box::new(timeline)).is_none()
    }
}

impl Default for PlayerQueues {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PlayerStats {
    /// New batches started.
    pub swaps: u64,
    /// Presentation changes applied to the sounding batch.
    pub reschedules: u64,
    /// Times the sounding batch was repeated for lack of new data.
    pub loops: u64,
    /// Timelines superseded before they were ever played.
    pub superseded: u64,
    /// Timelines freed on the audio thread because `recycle` was full.
    pub recycle_overflow: u64,
}

/// Owns the mixer on the audio thread.
///
/// A timeline with a new batch index starts at the next pattern-cycle
/// boundary. One with the index already sounding replaces its events from
/// the boundary on, keeping the batch origin. When a batch runs out it loops
/// without its idle hits.
pub struct LivePlayer {
    mixer: Mixer,
    queues: PlayerQueues,
    current: Option<Box<BatchTimeline>>,
    pending: Option<Box<BatchTimeline>>,
    origin: u64,
    cursor: usize,
    repeat: bool,
    cycle_len: u64,
    loop_len: u64,
    stats: PlayerStats,
}

impl LivePlayer {
    pub fn new(mixer: Mixer, transport: &Transport, queues: PlayerQueues) -> Self {
        let sr = mixer.config().sample_rate;
        let cycle_len = seconds_to_samples(transport.pattern_duration(), sr).max(1);
        let loop_len = cycle_len * transport.cycles_per_batch().max(1) as u64;
        Self {
            mixer,
            queues,
            current: None,
            pending: None,
            origin: 0,
            cursor: 0,
            repeat: false,
            cycle_len,
            loop_len,
            stats: PlayerStats::default(),
        }
    }

    pub fn mixer(&self) -> &Mixer {
        &self.mixer
    }

    pub fn stats(&self) -> PlayerStats {
        self.stats
    }

    pub fn current_index(&self) -> Option<u64> {
        self.current.as_ref().map(|t| t.index)
    }

    /// Sample at which the sounding batch started (or last looped).
    pub fn origin(&self) -> u64 {
        self.origin
    }

    pub fn cycle_len(&self) -> u64 {
        self.cycle_len
    }

    fn retire(&mut self, old: Box<BatchTimeline>) {
        if self.queues.recycle.push(old).is_err() {
            self.stats.recycle_overflow += 1;
        }
    }

    fn swap_in(&mut self, now: u64) {
        let Some(next) = self.pending.take() else { return };
        let same = self.current.as_ref().is_some_and(|c| c.index == next.index);
        if same {
            self.cursor = next.position_at(now - self.origin);
            self.stats.reschedules += 1;
        } else {
            self.origin = now;
            self.cursor = 0;
            self.repeat = false;
            self.stats.swaps += 1;
        }
        if let Some(old) = self.current.replace(next) {
            self.retire(old);
        }
    }

    /// Audio callback body: fills `out` completely, never blocks.
    pub fn process(&mut self, out: &mut [f32]) {
        while let Some(msg) = self.queues.inbox.pop() {
            if let Some(old) = self.pending.replace(msg) {
                let carried = self.current.as_ref().is_some_and(|c| c.index == old.index);
                if !carried {
                    self.stats.superseded += 1;
                }
                self.retire(old);
            }
        }
        let mut pos = 0;
        while pos < out.len() {
            let now = self.mixer.now();
            if self.pending.is_some() && (self.current.is_none() || (now - self.origin).is_multiple_of(self.cycle_len)) {
                self.swap_in(now);
            }
            if self.current.is_some() && now >= self.origin + self.loop_len {
                self.origin += self.loop_len;
                self.cursor = 0;
                self.repeat = true;
                self.stats.loops += 1;
            }
            let Some(current) = self.current.as_deref() else {
                self.mixer.render_block(&mut out[pos..]);
                return;
            };
            let boundary = self.origin + ((now - self.origin) / self.cycle_len + 1) * self.cycle_len;
            let end = out.len().min(pos + (boundary - now) as usize);
            let origin = self.origin;
            let repeat = self.repeat;
            let cursor = &mut self.cursor;
            self.mixer.render_block_with(&mut out[pos..end], |limit| loop {
                let ev = current.events.get(*cursor)?;
                let at = origin + ev.offset;
                if at >= limit {
                    return None;
                }
                *cursor += 1;
                if repeat && ev.event.idle_echo {
                    continue;
                }
                return Some((at, ev.event));
            });
            pos = end;
        }
    }
}
