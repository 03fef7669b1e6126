//! Per-layer voices: sample playback with linear-interpolation resampling
//! and a small oscillator bank for the synth layers.

use std::f64::consts::TAU;

use super::samples::SampleBuffer;
use crate::layer::Layer;
use crate::sequencer::LayerEvent;

pub const MAX_TONES: usize = 4;
pub const DEFAULT_POLYPHONY: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Waveform {
    Saw,
    /// Sine with softer second and third harmonics.
    Organ,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPatch {
    pub waveform: Waveform,
    /// Oscillator frequencies in Hz at rate 1.0 (at most [`MAX_TONES`]).
    pub tones: Vec<f64>,
    pub level: f32,
    /// One-pole lowpass cutoff in Hz, `None` to bypass.
    pub cutoff: Option<f64>,
    pub attack: f64,
    /// Exponential decay time constant in seconds.
    pub decay: f64,
    pub length: f64,
    pub release: f64,
}

impl SynthPatch {
    pub fn bass() -> Self {
        Self {
            waveform: Waveform::Saw,
            tones: vec![55.0],
            level: 0.8,
            cutoff: Some(900.0),
            attack: 0.003,
            decay: 0.18,
            length: 0.35,
            release: 0.02,
        }
    }

    /// A minor triad.
    pub fn chords() -> Self {
        Self {
            waveform: Waveform::Organ,
            tones: vec![220.0, 261.63, 329.63],
            level: 0.25,
            cutoff: None,
            attack: 0.01,
            decay: 0.5,
            length: 0.9,
            release: 0.05,
        }
    }

    pub fn for_layer(layer: Layer) -> Option<Self> {
        match layer {
            Layer::Bass => Some(Self::bass()),
            Layer::Chords => Some(Self::chords()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VoiceSource {
    Sample(SampleBuffer),
    Synth(SynthPatch),
}

/// Bus send levels of one note, already scaled by the note gain.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Sends {
    pub reverb: f32,
    pub delay: f32,
    pub echo: f32,
}

#[derive(Debug, Clone, Copy, Default)]
struct Note {
    active: bool,
    serial: u64,
    gain: f32,
    sends: Sends,
    // sample playback
    pos: f64,
    inc: f64,
    // synth
    phases: [f64; MAX_TONES],
    incs: [f64; MAX_TONES],
    age: u32,
    length: u32,
    env: f32,
    lp: f32,
}

/// Output buffers a voice adds into. All slices have the same length.
pub struct BusBuffers<'a> {
    pub dry: &'a mut [f32],
    pub reverb: &'a mut [f32],
    pub delay: &'a mut [f32],
    pub echo: &'a mut [f32],
}

#[derive(Debug, Clone)]
pub struct Voice {
    layer: Layer,
    source: VoiceSource,
    sample_rate: u32,
    notes: Box<[Note]>,
    next_serial: u64,
    steals: u64,
    // Derived synth constants, fixed per voice.
    attack_samples: f32,
    release_samples: f32,
    decay_coef: f32,
    lp_coef: f32,
}

impl Voice {
    pub fn new(layer: Layer, source: VoiceSource, polyphony: usize, sample_rate: u32) -> Self {
        let sr = sample_rate as f64;
        let (attack_samples, release_samples, decay_coef, lp_coef) = match &source {
            VoiceSource::Synth(p) => (
                (p.attack * sr).max(1.0) as f32,
                (p.release * sr).max(1.0) as f32,
                (-1.0 / (p.decay * sr)).exp() as f32,
                p.cutoff.map_or(0.0, |fc| (-TAU * fc / sr).exp() as f32),
            ),
            VoiceSource::Sample(_) => (1.0, 1.0, 1.0, 0.0),
        };
        Self {
            layer,
            source,
            sample_rate,
            notes: vec![Note::default(); polyphony.max(1)].into_boxed_slice(),
            next_serial: 0,
            steals: 0,
            attack_samples,
            release_samples,
            decay_coef,
            lp_coef,
        }
    }

    pub fn layer(&self) -> Layer {
        self.layer
    }

    pub fn source(&self) -> &VoiceSource {
        &self.source
    }

    pub fn polyphony(&self) -> usize {
        self.notes.len()
    }

    pub fn active_notes(&self) -> usize {
        self.notes.iter().filter(|n| n.active).count()
    }

    /// Notes cut short because polyphony was exhausted.
    pub fn steals(&self) -> u64 {
        self.steals
    }

    pub fn silence(&mut self) {
        for n in self.notes.iter_mut() {
            n.active = false;
        }
    }

    /// Starts a note for `event`. Returns `false` (and starts nothing) when
    /// the event gain is not positive.
    pub fn trigger(&mut self, event: &LayerEvent, echo_send: f32) -> bool {
        if event.gain.is_nan() || event.gain <= 0.0 {
            return false;
        }
        let slot = match self.notes.iter().position(|n| !n.active) {
            Some(i) => i,
            None => {
                self.steals += 1;
                self.notes
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, n)| n.serial)
                    .map(|(i, _)| i)
                    .expect("polyphony is at least 1")
            }
        };
        let gain = event.gain as f32;
        let mut note = Note {
            active: true,
            serial: self.next_serial,
            gain,
            sends: Sends {
                reverb: gain * event.fx.reverb as f32,
                delay: gain * event.fx.delay as f32,
                echo: if event.idle_echo { gain * echo_send } else { 0.0 },
            },
            env: 1.0,
            ..Note::default()
        };
        self.next_serial += 1;
        let rate = event.rate.max(1e-3);
        let sr = self.sample_rate as f64;
        match &self.source {
            VoiceSource::Sample(buf) => {
                note.inc = rate * buf.sample_rate as f64 / sr;
            }
            VoiceSource::Synth(patch) => {
                note.length = (patch.length * sr).round() as u32;
                for (k, f) in patch.tones.iter().take(MAX_TONES).enumerate() {
                    note.incs[k] = f * rate / sr;
                }
            }
        }
        self.notes[slot] = note;
        true
    }

    /// Adds every active note into the bus buffers.
    pub fn render(&mut self, out: &mut BusBuffers<'_>) {
        for note in self.notes.iter_mut().filter(|n| n.active) {
            match &self.source {
                VoiceSource::Sample(buf) => render_sample(note, &buf.data, out),
                VoiceSource::Synth(patch) => {
                    let k = SynthConsts {
                        attack: self.attack_samples,
                        release: self.release_samples,
                        decay: self.decay_coef,
                        lp: self.lp_coef,
                    };
                    render_synth(note, patch, &k, out)
                }
            }
        }
    }
}

#[inline]
fn mix(out: &mut BusBuffers<'_>, i: usize, s: f32, note: &Note) {
    out.dry[i] += s * note.gain;
    out.reverb[i] += s * note.sends.reverb;
    out.delay[i] += s * note.sends.delay;
    out.echo[i] += s * note.sends.echo;
}

fn render_sample(note: &mut Note, data: &[f32], out: &mut BusBuffers<'_>) {
    let len = data.len();
    for i in 0..out.dry.len() {
        let idx = note.pos as usize;
        if idx >= len {
            note.active = false;
            return;
        }
        let frac = (note.pos - idx as f64) as f32;
        let a = data[idx];
        let b = if idx + 1 < len { data[idx + 1] } else { 0.0 };
        note.pos += note.inc;
        mix(out, i, a + (b - a) * frac, note);
    }
}

struct SynthConsts {
    attack: f32,
    release: f32,
    decay: f32,
    lp: f32,
}

fn render_synth(note: &mut Note, patch: &SynthPatch, k: &SynthConsts, out: &mut BusBuffers<'_>) {
    let tones = patch.tones.len().min(MAX_TONES);
    for i in 0..out.dry.len() {
        if note.age >= note.length {
            note.active = false;
            return;
        }
        let mut x = 0.0f64;
        for t in 0..tones {
            let p = note.phases[t];
            x += match patch.waveform {
                Waveform::Saw => 2.0 * p - 1.0,
                Waveform::Organ => {
                    // sin w + 0.3 sin 2w + 0.15 sin 3w from one sin/cos pair.
                    let (s, c) = (TAU * p).sin_cos();
                    s + 0.6 * s * c + 0.15 * (3.0 * s - 4.0 * s * s * s)
                }
            };
            let next = p + note.incs[t];
            note.phases[t] = if next >= 1.0 { next - 1.0 } else { next };
        }
        let mut y = x as f32 * patch.level;
        if patch.cutoff.is_some() {
            note.lp += (1.0 - k.lp) * (y - note.lp);
            y = note.lp;
        }
        let age = note.age as f32;
        let env = (age / k.attack).min(1.0) * note.env * ((note.length - note.age) as f32 / k.release).min(1.0);
        note.env *= k.decay;
        note.age += 1;
        mix(out, i, y * env, note);
    }
}
