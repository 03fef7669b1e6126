//! Parameter mapping from scaled partition metrics to layer parameters.
//!
//! * scaled procs drive onset density on a 32-step grid (two bars of 16ths);
//!   below the idle threshold the layer plays a single echoed hit instead.
//! * memory usage drives a playback-rate ramp across the pattern's hits.
//! * scaled traffic drives the reverb and delay sends.

use std::fmt;

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::layer::{Layer, PerLayer};

/// Steps in one pattern: two 4/4 bars at sixteenth-note resolution.
pub const STEPS: usize = 32;

pub const DEFAULT_IDLE_THRESHOLD: f64 = 0.1;

/// Rate gained by the last hit at full memory usage (one octave).
pub const DEFAULT_MAX_RATE_RAMP: f64 = 1.0;

/// Scaled parameters of one partition for one batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionParams {
    pub partition: String,
    pub layer: Layer,
    pub scaled_procs: f64,
    pub memusage: f64,
    pub scaled_ibtx: f64,
    pub seq: u64,
}

/// A set of steps on the 32-step grid.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StepMask(u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("step {0} is outside the 32-step grid")]
pub struct StepOutOfRange(pub usize);

impl StepMask {
    pub const EMPTY: StepMask = StepMask(0);
    pub const FULL: StepMask = StepMask(u32::MAX);

    pub fn from_steps(steps: &[usize]) -> Result<Self, StepOutOfRange> {
        let mut mask = StepMask::EMPTY;
        for &s in steps {
            if s >= STEPS {
                return Err(StepOutOfRange(s));
            }
            mask.insert(s);
        }
        Ok(mask)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, step: usize) -> bool {
        step < STEPS && self.0 & (1 << step) != 0
    }

    pub fn insert(&mut self, step: usize) {
        debug_assert!(step < STEPS);
        self.0 |= 1 << step;
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_subset_of(self, other: StepMask) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn complement(self) -> StepMask {
        StepMask(!self.0)
    }

    /// Steps in ascending order.
    pub fn steps(self) -> impl Iterator<Item = usize> {
        (0..STEPS).filter(move |&s| self.contains(s))
    }
}

impl fmt::Debug for StepMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.steps()).finish()
    }
}

impl Serialize for StepMask {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.steps())
    }
}

impl<'de> Deserialize<'de> for StepMask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let steps = Vec::<usize>::deserialize(d)?;
        StepMask::from_steps(&steps).map_err(serde::de::Error::custom)
    }
}

/// Active onsets for one batch plus the layer's basic subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pattern {
    pub onsets: StepMask,
    pub basic: StepMask,
}

/// One hit at step 0 sent through the idle echo, then silence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdleEvent {
    pub layer: Layer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerPattern {
    Active(Pattern),
    Idle(IdleEvent),
}

impl LayerPattern {
    pub fn onset_count(&self) -> usize {
        match self {
            LayerPattern::Active(p) => p.onsets.count(),
            LayerPattern::Idle(_) => 1,
        }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self, LayerPattern::Idle(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FxSends {
    pub reverb: f64,
    pub delay: f64,
}

/// Everything the sequencer needs to voice one layer for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub layer: Layer,
    pub pattern: LayerPattern,
    /// One playback rate per onset, in step order.
    pub rate_curve: Vec<f64>,
    pub fx: FxSends,
}

pub fn default_basic_pattern(layer: Layer) -> StepMask {
    let steps: &[usize] = match layer {
        Layer::Kick => &[0, 8, 16, 24],
        Layer::Snare => &[4, 12, 20, 28],
        Layer::HiHats => &[2, 6, 10, 14, 18, 22, 26, 30],
        Layer::Clap => &[12, 28],
        Layer::Shaker => &[0, 4, 8, 12, 16, 20, 24, 28],
        Layer::SubBass => &[0, 16],
        Layer::Bass => &[0, 8, 16, 24],
        Layer::Chords => &[0, 16],
        Layer::FemaleVoice => &[0],
        Layer::MaleVoice => &[0],
    };
    StepMask::from_steps(steps).expect("default patterns are on the grid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingConfig {
    pub idle_threshold: f64,
    pub max_rate_ramp: f64,
    pub basic_patterns: PerLayer<StepMask>,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            idle_threshold: DEFAULT_IDLE_THRESHOLD,
            max_rate_ramp: DEFAULT_MAX_RATE_RAMP,
            basic_patterns: PerLayer(Layer::ALL.map(default_basic_pattern)),
        }
    }
}

/// Number of non-basic onsets added at `scaled_procs`: linear from 0 at the
/// idle threshold to every free slot at 1.0, rounded half up.
pub fn extra_onset_count(scaled_procs: f64, threshold: f64, free_slots: usize) -> usize {
    if scaled_procs < threshold {
        return 0;
    }
    let fraction = ((scaled_procs.min(1.0) - threshold) / (1.0 - threshold)).clamp(0.0, 1.0);
    // The epsilon keeps exact half-way products from rounding down after
    // floating-point error.
    let count = (fraction * free_slots as f64 + 0.5 + 1e-9).floor() as usize;
    count.min(free_slots)
}

/// Onset pattern for one layer and batch.
///
/// The extra onsets are a uniformly random subset of the non-basic slots,
/// drawn without replacement from `rng`.
pub fn map_procs_to_pattern<R: Rng>(
    layer: Layer,
    scaled_procs: f64,
    basic: StepMask,
    threshold: f64,
    rng: &mut R,
) -> LayerPattern {
    if scaled_procs < threshold {
        return LayerPattern::Idle(IdleEvent { layer });
    }
    let free: Vec<usize> = basic.complement().steps().collect();
    let extra = extra_onset_count(scaled_procs, threshold, free.len());
    let mut onsets = basic;
    for i in index::sample(rng, free.len(), extra) {
        onsets.insert(free[i]);
    }
    LayerPattern::Active(Pattern { onsets, basic })
}

/// Playback rates for `onsets` hits: the first at 1.0, rising linearly to
/// `1 + memusage * max_ramp` at the last.
pub fn map_mem_to_rate_curve(memusage: f64, onsets: usize, max_ramp: f64) -> Vec<f64> {
    match onsets {
        0 => Vec::new(),
        1 => vec![1.0],
        m => {
            let last = (m - 1) as f64;
            (0..m)
                .map(|k| 1.0 + memusage * max_ramp * k as f64 / last)
                .collect()
        }
    }
}

/// Uniform reverb and delay sends for every hit of the batch.
pub fn map_ibtx_to_fx(scaled_ibtx: f64) -> FxSends {
    let level = scaled_ibtx.clamp(0.0, 1.0);
    FxSends {
        reverb: level,
        delay: level,
    }
}

/// Pitch offset a synth applies for a playback rate.
pub fn semitones_for_rate(rate: f64) -> f64 {
    12.0 * rate.log2()
}

/// Independent random stream for one (batch, layer) pair.
pub fn layer_rng(seed: u64, batch_index: u64, layer: Layer) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((batch_index << 4) | layer.index() as u64);
    rng
}

/// Maps one partition's parameters onto its layer.
pub fn map_partition(params: &PartitionParams, cfg: &MappingConfig, seed: u64, batch_index: u64) -> LayerParams {
    let mut rng = layer_rng(seed, batch_index, params.layer);
    let pattern = map_procs_to_pattern(
        params.layer,
        params.scaled_procs,
        cfg.basic_patterns[params.layer],
        cfg.idle_threshold,
        &mut rng,
    );
    LayerParams {
        layer: params.layer,
        rate_curve: map_mem_to_rate_curve(params.memusage, pattern.onset_count(), cfg.max_rate_ramp),
        fx: map_ibtx_to_fx(params.scaled_ibtx),
        pattern,
    }
}
