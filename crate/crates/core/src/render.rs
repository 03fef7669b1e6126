//! Offline rendering of a recorded metrics log to a WAV file and event log.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::audio::{default_sources, seconds_to_samples, BatchTimeline, Mixer, MixerStats, SampleBuffer, TriggerRecord};
use crate::config::Config;
use crate::control::StatusMessage;
use crate::engine::{Engine, EventRecord, ScheduledBatch};
use crate::layer::PerLayer;
use crate::protocol::{IngestStats, Ingestor, ProtocolError};
use crate::sequencer::{Phase, Transport};

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("log line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: ProtocolError,
    },
    #[error("reading log: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing audio: {0}")]
    Wav(#[from] hound::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderOptions {
    /// Keep the sample position of every note start.
    pub record_triggers: bool,
    /// Only produce the event log.
    pub skip_audio: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSummary {
    pub index: u64,
    pub seq: u64,
    /// Round-robin phase the batch was played in.
    pub phase: Phase,
    pub version: u64,
}

#[derive(Debug, Clone)]
pub struct OfflineRender {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
    pub events: Vec<EventRecord>,
    pub triggers: Vec<TriggerRecord>,
    pub batches: Vec<BatchSummary>,
    pub ingest: IngestStats,
    pub mixer: MixerStats,
    pub final_state: StatusMessage,
}

impl OfflineRender {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn event_log(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&e.to_line());
            s.push('\n');
        }
        s
    }
}

/// Renders scheduled batches back to back. Batch `i` occupies samples
/// `[round(i * interval * sr), round((i + 1) * interval * sr))`.
pub struct BatchRenderer {
    mixer: Mixer,
    transport: Transport,
    sample_rate: u32,
    buf: Vec<f32>,
}

impl BatchRenderer {
    pub fn new(config: &Config, samples: &PerLayer<Option<SampleBuffer>>) -> Self {
        let transport = config.transport();
        let sr = config.audio.sample_rate;
        Self {
            mixer: Mixer::new(config.audio, &transport, default_sources(sr, samples)),
            transport,
            sample_rate: sr,
            buf: Vec::new(),
        }
    }

    pub fn mixer(&self) -> &Mixer {
        &self.mixer
    }

    pub fn mixer_mut(&mut self) -> &mut Mixer {
        &mut self.mixer
    }

    /// Audio for `batch`, continuing from wherever the previous batch ended
    /// (effect tails carry over).
    pub fn render(&mut self, batch: &ScheduledBatch) -> &[f32] {
        let sr = self.sample_rate;
        let origin = seconds_to_samples(batch.start_time(&self.transport), sr);
        let end = seconds_to_samples((batch.index + 1) as f64 * self.transport.batch_interval, sr);
        let frames = end.saturating_sub(self.mixer.now()) as usize;
        self.buf.clear();
        self.buf.resize(frames, 0.0);
        let timeline = BatchTimeline::new(batch, sr);
        self.mixer.render_timeline(&mut self.buf, &timeline, origin);
        &self.buf
    }
}

/// Runs the whole pipeline over `log`.
pub fn render_offline<R: BufRead>(
    log: R,
    config: &Config,
    samples: PerLayer<Option<SampleBuffer>>,
    opts: RenderOptions,
) -> Result<OfflineRender, RenderError> {
    let engine_cfg = config.engine_config();
    let transport = engine_cfg.transport;
    let mut ingestor = Ingestor::new(engine_cfg.table.clone());
    let mut engine = Engine::new(engine_cfg);
    let mut renderer = BatchRenderer::new(config, &samples);
    if opts.record_triggers {
        renderer.mixer_mut().record_triggers();
    }
    let mut out = Vec::new();
    let mut events = Vec::new();
    let mut batches = Vec::new();

    for (i, line) in log.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let batch = ingestor
            .ingest_line(line.as_bytes())
            .map_err(|source| RenderError::Line { line: i + 1, source })?;
        let scheduled = engine.process(&batch);
        events.extend(scheduled.records(&transport));
        batches.push(BatchSummary {
            index: scheduled.index,
            seq: scheduled.seq,
            phase: engine.state().round_robin.phase(),
            version: engine.state().version,
        });
        if !opts.skip_audio {
            out.extend_from_slice(renderer.render(engine.current().expect("just processed")));
        }
    }

    Ok(OfflineRender {
        sample_rate: config.audio.sample_rate,
        samples: out,
        events,
        triggers: renderer.mixer_mut().take_triggers(),
        batches,
        ingest: ingestor.stats(),
        mixer: renderer.mixer().stats(),
        final_state: engine.snapshot(),
    })
}

/// Writes mono linear PCM at 16 or 24 bits.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32, bit_depth: u16) -> Result<(), hound::Error> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: bit_depth,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    let full = ((1i64 << (bit_depth - 1)) - 1) as f32;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * full).round() as i32)?;
    }
    w.finalize()
}

pub fn write_event_log<W: Write>(mut w: W, events: &[EventRecord]) -> std::io::Result<()> {
    for e in events {
        writeln!(w, "{}", e.to_line())?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{encode_batch, Batch, NodeMetrics, PartitionTable};

    fn zero_log(n: u64) -> String {
        let table = PartitionTable::reference();
        (1..=n)
            .map(|seq| {
                let nodes = table
                    .entries()
                    .iter()
                    .map(|p| NodeMetrics {
                        id: format!("{}-n00", p.id),
                        partition: p.id.clone(),
                        procs: 0,
                        mem: 0.0,
                        ibtx: 0.0,
                    })
                    .collect();
                encode_batch(&Batch {
                    seq,
                    ts: seq as f64 * 15.0,
                    nodes,
                }) + "\n"
            })
            .collect()
    }

    fn none() -> PerLayer<Option<SampleBuffer>> {
        PerLayer(std::array::from_fn(|_| None))
    }

    #[test]
    fn four_batches_make_a_minute() {
        let r = render_offline(zero_log(4).as_bytes(), &Config::default(), none(), RenderOptions::default()).unwrap();
        assert_eq!(r.batches.len(), 4);
        assert_eq!(r.samples.len(), 60 * 48_000);
        assert_eq!(r.duration(), 60.0);
    }

    #[test]
    fn zero_log_plays_only_idle_hits() {
        let r = render_offline(zero_log(2).as_bytes(), &Config::default(), none(), RenderOptions::default()).unwrap();
        assert!(!r.events.is_empty());
        assert!(r.events.iter().all(|e| e.flags == vec!["idle-echo".to_string()] && e.step == 0));
        assert!(r.samples.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let mut log = zero_log(2);
        log.push_str("{not json}\n");
        let err = render_offline(log.as_bytes(), &Config::default(), none(), RenderOptions::default()).unwrap_err();
        assert!(matches!(err, RenderError::Line { line: 3, .. }), "{err}");
        assert!(err.to_string().starts_with("log line 3"));
    }

    #[test]
    fn renders_are_identical() {
        let run = || render_offline(zero_log(3).as_bytes(), &Config::default(), none(), RenderOptions::default()).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.event_log(), b.event_log());
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn wav_output_has_expected_length() {
        let dir = tempfile::tempdir().unwrap();
        for bits in [16, 24] {
            let p = dir.path().join(format!("o{bits}.wav"));
            write_wav(&p, &[0.0, 0.5, -1.0, 1.0], 48_000, bits).unwrap();
            let r = hound::WavReader::open(&p).unwrap();
            assert_eq!(r.spec().bits_per_sample, bits);
            assert_eq!(r.duration(), 4);
        }
    }
}
