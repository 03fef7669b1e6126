//! Sound generation: voices, effect buses, the mixer and the real-time player.

pub mod dsp;
pub mod live;
pub mod mixer;
pub mod samples;
pub mod voice;

pub use live::{LivePlayer, PlayerQueues, PlayerStats};
pub use mixer::{
    default_sources, seconds_to_samples, AudioConfig, AudioConfigError, BatchTimeline, Mixer, MixerStats,
    RenderClock, TimedEvent, TriggerRecord,
};
pub use samples::{SampleBuffer, SampleError};
pub use voice::{BusBuffers, Sends, SynthPatch, Voice, VoiceSource};
