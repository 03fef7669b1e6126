//! Musical clock, round-robin presentation and event expansion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::EngineState;
use crate::layer::{Layer, PerLayer, LAYER_COUNT};
use crate::mapping::{FxSends, LayerParams, LayerPattern, STEPS};

pub const DEFAULT_BPM: f64 = 128.0;
pub const DEFAULT_BATCH_INTERVAL: f64 = 15.0;
pub const STEPS_PER_BEAT: usize = 4;
pub const BEATS_PER_BAR: usize = 4;
pub const PATTERN_BARS: usize = 2;

/// Batches each layer spends in the foreground, and the tutti length.
pub const BATCHES_PER_PHASE: u8 = 2;

/// Batches in one full round-robin cycle: ten foreground phases plus tutti.
pub const CYCLE_BATCHES: usize = (LAYER_COUNT + 1) * BATCHES_PER_PHASE as usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transport {
    pub bpm: f64,
    /// Seconds per metrics batch.
    pub batch_interval: f64,
}

impl Default for Transport {
    fn default() -> Self {
        Self {
            bpm: DEFAULT_BPM,
            batch_interval: DEFAULT_BATCH_INTERVAL,
        }
    }
}

impl Transport {
    /// Seconds per sixteenth.
    pub fn step_duration(&self) -> f64 {
        60.0 / self.bpm / STEPS_PER_BEAT as f64
    }

    /// Seconds per two-bar pattern.
    pub fn pattern_duration(&self) -> f64 {
        self.step_duration() * STEPS as f64
    }

    /// Whole pattern cycles that fit in one batch.
    pub fn cycles_per_batch(&self) -> usize {
        (self.batch_interval / self.pattern_duration() + 1e-9).floor() as usize
    }
}

/// Presentation role of a layer within round-robin mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Foreground,
    Background,
    Silent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Foreground(Layer),
    Tutti,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PresentationConfig {
    /// Chance that a non-foreground layer stays audible in the background.
    pub background_probability: f64,
    /// Linear gain of background layers (0.25 is about -12 dB).
    pub background_gain: f64,
    pub foreground_gain: f64,
}

impl Default for PresentationConfig {
    fn default() -> Self {
        Self {
            background_probability: 0.5,
            background_gain: 0.25,
            foreground_gain: 1.0,
        }
    }
}

impl PresentationConfig {
    pub fn gain(&self, role: Role) -> f64 {
        match role {
            Role::Foreground => self.foreground_gain,
            Role::Background => self.background_gain,
            Role::Silent => 0.0,
        }
    }
}

/// Which layer is in front, how long it has been there, and what the
/// others are doing.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRobinState {
    phase: Phase,
    batches_in_phase: u8,
    roles: PerLayer<Role>,
    background_probability: f64,
}

impl RoundRobinState {
    /// Starts with the kick in front.
    pub fn new<R: Rng>(background_probability: f64, rng: &mut R) -> Self {
        let mut state = Self {
            phase: Phase::Foreground(Layer::ALL[0]),
            batches_in_phase: 0,
            roles: PerLayer::splat(Role::Silent),
            background_probability,
        };
        state.redraw_roles(rng);
        state
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn batches_in_phase(&self) -> u8 {
        self.batches_in_phase
    }

    pub fn foreground(&self) -> Option<Layer> {
        match self.phase {
            Phase::Foreground(layer) => Some(layer),
            Phase::Tutti => None,
        }
    }

    pub fn role(&self, layer: Layer) -> Role {
        self.roles[layer]
    }

    fn redraw_roles<R: Rng>(&mut self, rng: &mut R) {
        for layer in Layer::ALL {
            self.roles[layer] = match self.phase {
                Phase::Tutti => Role::Foreground,
                Phase::Foreground(front) if front == layer => Role::Foreground,
                Phase::Foreground(_) => {
                    if rng.random_bool(self.background_probability) {
                        Role::Background
                    } else {
                        Role::Silent
                    }
                }
            };
        }
    }

    /// Moves forward one batch. Each phase lasts two batches; after the
    /// last layer comes a tutti, then the cycle restarts. Non-foreground
    /// roles are redrawn at every phase change.
    pub fn advance<R: Rng>(&mut self, rng: &mut R) {
        self.batches_in_phase += 1;
        if self.batches_in_phase < BATCHES_PER_PHASE {
            return;
        }
        self.batches_in_phase = 0;
        self.phase = match self.phase {
            Phase::Foreground(layer) => match Layer::from_index(layer.index() + 1) {
                Some(next) => Phase::Foreground(next),
                None => Phase::Tutti,
            },
            Phase::Tutti => Phase::Foreground(Layer::ALL[0]),
        };
        self.redraw_roles(rng);
    }
}

pub fn advance_round_robin<R: Rng>(state: &RoundRobinState, rng: &mut R) -> RoundRobinState {
    let mut next = state.clone();
    next.advance(rng);
    next
}

/// A timed hit: the sequencer-to-audio contract.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerEvent {
    pub layer: Layer,
    /// Seconds from the start of the batch.
    pub onset: f64,
    pub step: u8,
    pub rate: f64,
    pub gain: f64,
    pub fx: FxSends,
    /// Routed through the idle echo.
    pub idle_echo: bool,
}

/// Expands a layer's pattern over every whole cycle of the batch, at unit
/// gain. An idle layer yields a single echoed hit at time 0.
pub fn pattern_to_events(layer: &LayerParams, transport: &Transport) -> Vec<LayerEvent> {
    let onsets = match layer.pattern {
        LayerPattern::Idle(_) => {
            return vec![LayerEvent {
                layer: layer.layer,
                onset: 0.0,
                step: 0,
                rate: layer.rate_curve.first().copied().unwrap_or(1.0),
                gain: 1.0,
                fx: layer.fx,
                idle_echo: true,
            }];
        }
        LayerPattern::Active(p) => p.onsets,
    };
    let step = transport.step_duration();
    let cycle = transport.pattern_duration();
    let cycles = transport.cycles_per_batch();
    let mut events = Vec::with_capacity(onsets.count() * cycles);
    for c in 0..cycles {
        for (k, s) in onsets.steps().enumerate() {
            events.push(LayerEvent {
                layer: layer.layer,
                onset: s as f64 * step + c as f64 * cycle,
                step: s as u8,
                rate: layer.rate_curve.get(k).copied().unwrap_or(1.0),
                gain: 1.0,
                fx: layer.fx,
                idle_echo: false,
            });
        }
    }
    events
}

/// All events of one batch, with presentation gains applied and sorted by
/// onset. Layers that are silent or paused contribute nothing.
pub fn schedule_batch(
    layers: &[LayerParams],
    engine: &EngineState,
    transport: &Transport,
    presentation: &PresentationConfig,
) -> Vec<LayerEvent> {
    let mut events = Vec::new();
    for params in layers {
        let gain = engine.gain(params.layer, presentation);
        if gain <= 0.0 {
            continue;
        }
        events.extend(pattern_to_events(params, transport).into_iter().map(|mut e| {
            e.gain = gain.min(1.0);
            e
        }));
    }
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    events
}
