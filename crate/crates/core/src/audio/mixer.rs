use serde::{Deserialize, Serialize};

use super::dsp::{FdnReverb, FeedbackDelay};
use super::samples::{self, SampleBuffer};
use super::voice::{BusBuffers, SynthPatch, Voice, VoiceSource, DEFAULT_POLYPHONY};
use crate::engine::ScheduledBatch;
use crate::layer::{Layer, PerLayer};
use crate::sequencer::{LayerEvent, Transport};

pub const SUPPORTED_SAMPLE_RATES: [u32; 3] = [44_100, 48_000, 96_000];
pub const MAX_BLOCK_SIZE: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub block_size: usize,
    pub bit_depth: u16,
    pub polyphony: usize,
    pub master_gain: f32,
    pub delay_steps: u32,
    pub delay_feedback: f32,
    pub delay_wet: f32,
    /// Echo applied to idle hits.
    pub echo_steps: u32,
    pub echo_feedback: f32,
    pub echo_wet: f32,
    pub reverb_decay: f32,
    pub reverb_damping: f32,
    pub reverb_wet: f32,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 48_000,
            block_size: 256,
            bit_depth: 16,
            polyphony: DEFAULT_POLYPHONY,
            master_gain: 0.3,
            delay_steps: 3,
            delay_feedback: 0.45,
            delay_wet: 0.4,
            echo_steps: 3,
            echo_feedback: 0.6,
            echo_wet: 1.0,
            reverb_decay: 2.5,
            reverb_damping: 0.3,
            reverb_wet: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{key}: {message}")]
pub struct AudioConfigError {
    pub key: &'static str,
    pub message: String,
}

impl AudioConfig {
    pub fn validate(&self) -> Result<(), AudioConfigError> {
        let fail = |key, message: String| Err(AudioConfigError { key, message });
        if !SUPPORTED_SAMPLE_RATES.contains(&self.sample_rate) {
            return fail("sample_rate", format!("{} Hz is not one of 44100, 48000, 96000", self.sample_rate));
        }
        if self.block_size == 0 || self.block_size > MAX_BLOCK_SIZE {
            return fail("block_size", format!("must be in 1..={MAX_BLOCK_SIZE}"));
        }
        if self.bit_depth != 16 && self.bit_depth != 24 {
            return fail("bit_depth", format!("{} is not 16 or 24", self.bit_depth));
        }
        if self.polyphony == 0 {
            return fail("polyphony", "must be at least 1".into());
        }
        for (key, fb) in [("delay_feedback", self.delay_feedback), ("echo_feedback", self.echo_feedback)] {
            if !(0.0..1.0).contains(&fb) {
                return fail(key, format!("{fb} must be in [0, 1)"));
            }
        }
        for (key, steps) in [("delay_steps", self.delay_steps), ("echo_steps", self.echo_steps)] {
            if steps == 0 {
                return fail(key, "must be at least 1".into());
            }
        }
        if !(0.0..1.0).contains(&self.reverb_damping) {
            return fail("reverb_damping", "must be in [0, 1)".into());
        }
        for (key, v) in [
            ("master_gain", self.master_gain),
            ("delay_wet", self.delay_wet),
            ("echo_wet", self.echo_wet),
            ("reverb_wet", self.reverb_wet),
            ("reverb_decay", self.reverb_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(key, format!("{v} must be a non-negative number"));
            }
        }
        Ok(())
    }
}

/// Absolute sample position of the output stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderClock {
    pub sample_rate: u32,
    pub block_size: usize,
    now: u64,
}

impl RenderClock {
    pub fn new(sample_rate: u32, block_size: usize) -> Self {
        Self {
            sample_rate,
            block_size,
            now: 0,
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn advance(&mut self, frames: usize) {
        self.now += frames as u64;
    }

    pub fn seconds(&self) -> f64 {
        self.now as f64 / self.sample_rate as f64
    }

    /// Wall-clock length of one block.
    pub fn block_period(&self) -> std::time::Duration {
        std::time::Duration::from_secs_f64(self.block_size as f64 / self.sample_rate as f64)
    }

    /// Nearest output sample to `t` seconds.
    pub fn to_sample(&self, t: f64) -> u64 {
        seconds_to_samples(t, self.sample_rate)
    }
}

pub fn seconds_to_samples(t: f64, sample_rate: u32) -> u64 {
    (t * sample_rate as f64).round().max(0.0) as u64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedEvent {
    /// Samples from the start of the batch.
    pub offset: u64,
    pub event: LayerEvent,
}

/// A batch's events quantized to output samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTimeline {
    pub index: u64,
    pub seq: u64,
    pub events: Vec<TimedEvent>,
}

impl BatchTimeline {
    pub fn new(batch: &ScheduledBatch, sample_rate: u32) -> Self {
        let mut events: Vec<TimedEvent> = batch
            .events
            .iter()
            .map(|e| TimedEvent {
                offset: seconds_to_samples(e.onset, sample_rate),
                event: *e,
            })
            .collect();
        events.sort_by_key(|e| e.offset);
        Self {
            index: batch.index,
            seq: batch.seq,
            events,
        }
    }

    /// Index of the first event at or after `offset`.
    pub fn position_at(&self, offset: u64) -> usize {
        self.events.partition_point(|e| e.offset < offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriggerRecord {
    pub sample: u64,
    pub layer: Layer,
    pub step: u8,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MixerStats {
    pub blocks: u64,
    pub triggers: u64,
    /// Output samples that exceeded full scale before clamping.
    pub limiter_hits: u64,
    pub steals: u64,
}

/// Builds the default voice set, replacing placeholders with any loaded
/// samples.
pub fn default_sources(sample_rate: u32, overrides: &PerLayer<Option<SampleBuffer>>) -> PerLayer<VoiceSource> {
    PerLayer(Layer::ALL.map(|layer| {
        if let Some(buf) = &overrides[layer] {
            return VoiceSource::Sample(buf.clone());
        }
        match SynthPatch::for_layer(layer) {
            Some(p) => VoiceSource::Synth(p),
            None => VoiceSource::Sample(samples::placeholder(layer, sample_rate).expect("sample layer")),
        }
    }))
}

/// Voices, effect buses and master stage.
#[derive(Debug, Clone)]
pub struct Mixer {
    cfg: AudioConfig,
    clock: RenderClock,
    voices: Vec<Voice>,
    delay: FeedbackDelay,
    echo: FeedbackDelay,
    reverb: FdnReverb,
    dry: Vec<f32>,
    reverb_in: Vec<f32>,
    delay_in: Vec<f32>,
    echo_in: Vec<f32>,
    stats: MixerStats,
    trigger_log: Option<Vec<TriggerRecord>>,
}

impl Mixer {
    pub fn new(cfg: AudioConfig, transport: &Transport, sources: PerLayer<VoiceSource>) -> Self {
        let sr = cfg.sample_rate;
        let step = transport.step_duration();
        let voices = Layer::ALL
            .iter()
            .zip(sources.0)
            .map(|(&layer, src)| Voice::new(layer, src, cfg.polyphony, sr))
            .collect();
        let bs = cfg.block_size;
        Self {
            clock: RenderClock::new(sr, bs),
            voices,
            delay: FeedbackDelay::new(seconds_to_samples(cfg.delay_steps as f64 * step, sr) as usize, cfg.delay_feedback),
            echo: FeedbackDelay::new(seconds_to_samples(cfg.echo_steps as f64 * step, sr) as usize, cfg.echo_feedback),
            reverb: FdnReverb::new(sr, cfg.reverb_decay, cfg.reverb_damping),
            dry: vec![0.0; bs],
            reverb_in: vec![0.0; bs],
            delay_in: vec![0.0; bs],
            echo_in: vec![0.0; bs],
            stats: MixerStats::default(),
            trigger_log: None,
            cfg,
        }
    }

    pub fn with_default_voices(cfg: AudioConfig, transport: &Transport) -> Self {
        let none = PerLayer(std::array::from_fn(|_| None));
        Self::new(cfg, transport, default_sources(cfg.sample_rate, &none))
    }

    pub fn config(&self) -> &AudioConfig {
        &self.cfg
    }

    pub fn clock(&self) -> &RenderClock {
        &self.clock
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn stats(&self) -> MixerStats {
        let mut s = self.stats;
        s.steals = self.voices.iter().map(|v| v.steals()).sum();
        s
    }

    pub fn voice(&self, layer: Layer) -> &Voice {
        &self.voices[layer.index()]
    }

    pub fn delay_samples(&self) -> usize {
        self.delay.delay()
    }

    pub fn echo_samples(&self) -> usize {
        self.echo.delay()
    }

    /// Keeps a record of every trigger (offline analysis only; allocates).
    pub fn record_triggers(&mut self) {
        self.trigger_log.get_or_insert_with(Vec::new);
    }

    pub fn take_triggers(&mut self) -> Vec<TriggerRecord> {
        self.trigger_log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Starts a note at the current clock position.
    pub fn trigger(&mut self, event: &LayerEvent) -> bool {
        self.trigger_at(self.clock.now(), event)
    }

    fn trigger_at(&mut self, sample: u64, event: &LayerEvent) -> bool {
        let started = self.voices[event.layer.index()].trigger(event, 1.0);
        if started {
            self.stats.triggers += 1;
            if let Some(log) = &mut self.trigger_log {
                log.push(TriggerRecord {
                    sample,
                    layer: event.layer,
                    step: event.step,
                });
            }
        }
        started
    }

    /// Renders with no new triggers.
    pub fn render_block(&mut self, out: &mut [f32]) {
        self.render_block_with(out, |_| None);
    }

    /// Renders `out.len()` frames. `next_due(end)` must yield, in order, each
    /// pending event whose absolute sample is before `end`, and `None` once
    /// there are no more; every event starts on its own sample (late ones
    /// start at the beginning of the block).
    pub fn render_block_with<F>(&mut self, out: &mut [f32], mut next_due: F)
    where
        F: FnMut(u64) -> Option<(u64, LayerEvent)>,
    {
        let bs = self.cfg.block_size;
        for chunk in out.chunks_mut(bs) {
            let frames = chunk.len();
            let start = self.clock.now();
            let end = start + frames as u64;
            let mut pos = 0;
            while let Some((at, ev)) = next_due(end) {
                let off = at.saturating_sub(start) as usize;
                if off > pos {
                    self.render_voices(pos, off);
                    pos = off;
                }
                self.trigger_at(at.max(start), &ev);
            }
            self.render_voices(pos, frames);
            self.finish(chunk);
        }
    }

    fn render_voices(&mut self, from: usize, to: usize) {
        let mut bus = BusBuffers {
            dry: &mut self.dry[from..to],
            reverb: &mut self.reverb_in[from..to],
            delay: &mut self.delay_in[from..to],
            echo: &mut self.echo_in[from..to],
        };
        for v in &mut self.voices {
            v.render(&mut bus);
        }
    }

    fn finish(&mut self, out: &mut [f32]) {
        let c = &self.cfg;
        let n = out.len();
        let inputs = self.dry[..n]
            .iter()
            .zip(&self.reverb_in[..n])
            .zip(&self.delay_in[..n])
            .zip(&self.echo_in[..n]);
        let mut clipped = 0;
        for (o, (((&dry, &rev), &del), &echo)) in out.iter_mut().zip(inputs) {
            let wet = self.reverb.process(rev) * c.reverb_wet
                + self.delay.process(del) * c.delay_wet
                + self.echo.process(echo) * c.echo_wet;
            let y = (dry + wet) * c.master_gain;
            if y.abs() > 1.0 {
                clipped += 1;
            }
            *o = y.clamp(-1.0, 1.0);
        }
        self.stats.limiter_hits += clipped;
        self.dry[..n].fill(0.0);
        self.reverb_in[..n].fill(0.0);
        self.delay_in[..n].fill(0.0);
        self.echo_in[..n].fill(0.0);
        self.clock.advance(n);
        self.stats.blocks += 1;
    }

    /// Renders a timeline whose first sample is `origin`, covering
    /// `frames` samples from the current clock.
    pub fn render_timeline(&mut self, out: &mut [f32], timeline: &BatchTimeline, origin: u64) {
        let mut cursor = timeline.position_at(self.clock.now().saturating_sub(origin));
        self.render_block_with(out, |end| {
            let ev = timeline.events.get(cursor)?;
            let at = origin + ev.offset;
            if at >= end {
                return None;
            }
            cursor += 1;
            Some((at, ev.event))
        });
    }
}
