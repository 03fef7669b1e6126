//! Built-in placeholder sounds and WAV sample loading.

use std::f32::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dsp::Resonator;
use crate::layer::Layer;

/// Mono audio at its own sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    pub data: Vec<f32>,
    pub sample_rate: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum SampleError {
    #[error("cannot read sample {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: hound::Error,
    },
    #[error("sample {0} is empty")]
    Empty(String),
}

impl SampleBuffer {
    pub fn new(data: Vec<f32>, sample_rate: u32) -> Self {
        Self { data, sample_rate }
    }

    pub fn duration(&self) -> f64 {
        self.data.len() as f64 / self.sample_rate as f64
    }

    /// Loads a PCM or float WAV file, mixing channels down to mono.
    pub fn load_wav(path: &Path) -> Result<Self, SampleError> {
        let err = |source| SampleError::Read {
            path: path.display().to_string(),
            source,
        };
        let mut reader = hound::WavReader::open(path).map_err(err)?;
        let spec = reader.spec();
        let channels = spec.channels.max(1) as usize;
        let interleaved: Vec<f32> = match spec.sample_format {
            hound::SampleFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>().map_err(err)?,
            hound::SampleFormat::Int => {
                let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| v as f32 * scale))
                    .collect::<Result<_, _>>()
                    .map_err(err)?
            }
        };
        let data: Vec<f32> = interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect();
        if data.is_empty() {
            return Err(SampleError::Empty(path.display().to_string()));
        }
        Ok(Self::new(data, spec.sample_rate))
    }
}

fn normalize(mut data: Vec<f32>, peak: f32) -> Vec<f32> {
    let max = data.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if max > 0.0 {
        let g = peak / max;
        for v in &mut data {
            *v *= g;
        }
    }
    data
}

fn noise(seed: u64, n: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn highpass(x: &mut [f32], passes: usize) {
    for _ in 0..passes {
        let mut prev = 0.0;
        for v in x.iter_mut() {
            let cur = *v;
            *v = cur - prev;
            prev = cur;
        }
    }
}

fn len(sr: u32, seconds: f32) -> usize {
    (sr as f32 * seconds).round() as usize
}

pub fn kick(sr: u32) -> SampleBuffer {
    let n = len(sr, 0.45);
    let click = noise(1, n);
    let mut phase = 0.0f32;
    let data = (0..n)
        .map(|i| {
            let t = i as f32 / sr as f32;
            let f = 45.0 + 110.0 * (-t / 0.04).exp();
            phase += TAU * f / sr as f32;
            phase.sin() * (-t / 0.15).exp() + 0.3 * click[i] * (-t / 0.003).exp()
        })
        .collect();
    SampleBuffer::new(normalize(data, 0.9), sr)
}

pub fn snare(sr: u32) -> SampleBuffer {
    let n = len(sr, 0.25);
    let mut hiss = noise(2, n);
    highpass(&mut hiss, 1);
    let data = (0..n)
        .map(|i| {
            let t = i as f32 / sr as f32;
            0.5 * (TAU * 185.0 * t).sin() * (-t / 0.05).exp() + 0.7 * hiss[i] * (-t / 0.08).exp()
        })
        .collect();
    SampleBuffer::new(normalize(data, 0.9), sr)
}

pub fn hi_hat(sr: u32) -> SampleBuffer {
    let n = len(sr, 0.07);
    let mut x = noise(3, n);
    highpass(&mut x, 2);
    for (i, v) in x.iter_mut().enumerate() {
        *v *= (-(i as f32 / sr as f32) / 0.015).exp();
    }
    SampleBuffer::new(normalize(x, 0.7), sr)
}

pub fn clap(sr: u32) -> SampleBuffer {
    let n = len(sr, 0.22);
    let mut x = noise(4, n);
    highpass(&mut x, 1);
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f32 / sr as f32;
        let bursts: f32 = [0.0, 0.01, 0.02]
            .iter()
            .filter(|&&start| t >= start)
            .map(|start| (-(t - start) / 0.004).exp())
            .sum();
        *v *= bursts + 0.5 * (-t / 0.06).exp();
    }
    SampleBuffer::new(normalize(x, 0.8), sr)
}

pub fn shaker(sr: u32) -> SampleBuffer {
    let n = len(sr, 0.09);
    let mut x = noise(5, n);
    highpass(&mut x, 2);
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f32 / sr as f32;
        let env = (t / 0.015).min(1.0) * (-(t - 0.015).max(0.0) / 0.03).exp();
        *v *= env;
    }
    SampleBuffer::new(normalize(x, 0.5), sr)
}

pub fn sub_bass(sr: u32) -> SampleBuffer {
    let n = len(sr, 0.5);
    let data = (0..n)
        .map(|i| {
            let t = i as f32 / sr as f32;
            (TAU * 41.2 * t).sin() * (t / 0.005).min(1.0) * (-t / 0.25).exp()
        })
        .collect();
    SampleBuffer::new(normalize(data, 0.9), sr)
}

/// Sustained vowel: a sawtooth with light vibrato through three formant
/// resonators.
pub fn vowel(sr: u32, f0: f32, formants: [(f32, f32); 3]) -> SampleBuffer {
    let n = len(sr, 0.4);
    let mut filters = formants.map(|(f, bw)| Resonator::new(sr, f, bw));
    let mut phase = 0.0f32;
    let release = len(sr, 0.08) as f32;
    let data = (0..n)
        .map(|i| {
            let t = i as f32 / sr as f32;
            let f = f0 * (1.0 + 0.01 * (TAU * 5.5 * t).sin());
            phase = (phase + f / sr as f32).fract();
            let src = 2.0 * phase - 1.0;
            let y: f32 = filters.iter_mut().map(|r| r.process(src)).sum();
            let env = (t / 0.03).min(1.0) * ((n - i) as f32 / release).min(1.0);
            y * env
        })
        .collect();
    SampleBuffer::new(normalize(data, 0.8), sr)
}

pub fn female_voice(sr: u32) -> SampleBuffer {
    vowel(sr, 220.0, [(800.0, 80.0), (1150.0, 90.0), (2900.0, 120.0)])
}

pub fn male_voice(sr: u32) -> SampleBuffer {
    vowel(sr, 110.0, [(700.0, 70.0), (1220.0, 80.0), (2600.0, 110.0)])
}

/// Placeholder sample for a sample-based layer; `None` for the synth layers.
pub fn placeholder(layer: Layer, sr: u32) -> Option<SampleBuffer> {
    Some(match layer {
        Layer::Kick => kick(sr),
        Layer::Snare => snare(sr),
        Layer::HiHats => hi_hat(sr),
        Layer::Clap => clap(sr),
        Layer::Shaker => shaker(sr),
        Layer::SubBass => sub_bass(sr),
        Layer::FemaleVoice => female_voice(sr),
        Layer::MaleVoice => male_voice(sr),
        Layer::Bass | Layer::Chords => return None,
    })
}
