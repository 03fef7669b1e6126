pub mod audio;
pub mod clustersim;
pub mod config;
pub mod control;
pub mod engine;
pub mod layer;
pub mod mapping;
pub mod normalize;
pub mod protocol;
pub mod render;
pub mod sequencer;

pub use engine::{Engine, EngineConfig, EventRecord, ScheduledBatch};
pub use layer::{Layer, PerLayer, LAYER_COUNT};
pub use config::{Config, ConfigError};
pub use render::{render_offline, BatchRenderer, OfflineRender, RenderError, RenderOptions};
