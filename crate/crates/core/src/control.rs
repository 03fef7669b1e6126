//! Presentation state machine and the operator command protocol.
//!
//! Clients send one JSON command per line (or per WebSocket text frame):
//!
//! ```text
//! {"cmd":"set_mode","mode":"full_display"}
//! {"cmd":"pause_layer","layer":"kick"}
//! {"cmd":"resume_layer","layer":"kick"}
//! {"cmd":"select_layers","layers":["snare","clap"]}
//! {"cmd":"set_window_n","metric":"procs","n":8}
//! {"cmd":"get_state"}
//! ```
//!
//! Every state change bumps the version and is broadcast as a `state`
//! message; commands are answered with an `ack` carrying the resulting
//! version, or an `error`.

use serde::{Deserialize, Serialize};

use crate::layer::{Layer, PerLayer};
use crate::mapping::PartitionParams;
use crate::normalize::{Metric, ScalerConfig};
use crate::sequencer::{Phase, PresentationConfig, Role, RoundRobinState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    RoundRobin,
    FullDisplay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerFlags {
    pub paused: bool,
    /// Part of the monitored set in full-display mode.
    pub selected: bool,
}

impl Default for LayerFlags {
    fn default() -> Self {
        Self {
            paused: false,
            selected: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub version: u64,
    pub mode: Mode,
    pub layers: PerLayer<LayerFlags>,
    pub round_robin: RoundRobinState,
    pub windows: ScalerConfig,
    pub partitions: Vec<PartitionParams>,
}

impl EngineState {
    pub fn new(round_robin: RoundRobinState, windows: ScalerConfig) -> Self {
        Self {
            version: 0,
            mode: Mode::RoundRobin,
            layers: PerLayer::splat(LayerFlags::default()),
            round_robin,
            windows,
            partitions: Vec::new(),
        }
    }

    /// Records a state change.
    pub fn bump(&mut self) -> u64 {
        self.version += 1;
        self.version
    }

    pub fn role(&self, layer: Layer) -> Role {
        match self.mode {
            Mode::RoundRobin => self.round_robin.role(layer),
            Mode::FullDisplay => {
                let flags = self.layers[layer];
                if flags.selected && !flags.paused {
                    Role::Foreground
                } else {
                    Role::Silent
                }
            }
        }
    }

    /// Linear gain the layer plays at; 0 when it must stay quiet.
    pub fn gain(&self, layer: Layer, presentation: &PresentationConfig) -> f64 {
        if self.layers[layer].paused {
            return 0.0;
        }
        presentation.gain(self.role(layer))
    }

    pub fn is_audible(&self, layer: Layer, presentation: &PresentationConfig) -> bool {
        self.gain(layer, presentation) > 0.0
    }

    pub fn snapshot(&self) -> StatusMessage {
        snapshot_state(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    SetMode { mode: Mode },
    PauseLayer { layer: String },
    ResumeLayer { layer: String },
    SelectLayers { layers: Vec<String> },
    SetWindowN { metric: String, n: usize },
    GetState {},
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SetMode { .. } => "set_mode",
            Command::PauseLayer { .. } => "pause_layer",
            Command::ResumeLayer { .. } => "resume_layer",
            Command::SelectLayers { .. } => "select_layers",
            Command::SetWindowN { .. } => "set_window_n",
            Command::GetState {} => "get_state",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("malformed command: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("{0}")]
    UnknownMetric(String),
    #[error("window length must be at least 1")]
    ZeroWindow,
}

pub fn parse_command(raw: &[u8]) -> Result<Command, ControlError> {
    Ok(serde_json::from_slice(raw.trim_ascii())?)
}

fn layer(id: &str) -> Result<Layer, ControlError> {
    id.parse().map_err(|_| ControlError::UnknownLayer(id.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename = "ack")]
pub struct Ack {
    pub cmd: &'static str,
    pub version: u64,
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Ack(Ack),
    State(StatusMessage),
}

impl Reply {
    pub fn to_json(&self) -> String {
        match self {
            Reply::Ack(ack) => serde_json::to_string(ack),
            Reply::State(status) => serde_json::to_string(status),
        }
        .expect("reply serialization is infallible")
    }
}

#[derive(Debug, Serialize)]
#[serde(tag = "type", rename = "error")]
pub struct ErrorReply {
    pub message: String,
}

pub fn error_json(err: &ControlError) -> String {
    serde_json::to_string(&ErrorReply {
        message: err.to_string(),
    })
    .expect("error serialization is infallible")
}

/// Applies one command. Validation happens before any mutation, so a
/// rejected command leaves `state` untouched; a command that changes nothing
/// succeeds without bumping the version.
pub fn apply_command(state: &mut EngineState, cmd: &Command) -> Result<Reply, ControlError> {
    let before_version = state.version;
    let changed = match cmd {
        Command::GetState {} => return Ok(Reply::State(state.snapshot())),
        Command::SetMode { mode } => {
            let changed = state.mode != *mode;
            state.mode = *mode;
            changed
        }
        Command::PauseLayer { layer: id } => {
            let l = layer(id)?;
            let changed = !state.layers[l].paused;
            state.layers[l].paused = true;
            changed
        }
        Command::ResumeLayer { layer: id } => {
            let l = layer(id)?;
            let changed = state.layers[l].paused;
            state.layers[l].paused = false;
            changed
        }
        Command::SelectLayers { layers } => {
            let chosen = layers.iter().map(|id| layer(id)).collect::<Result<Vec<_>, _>>()?;
            let mut changed = false;
            for l in Layer::ALL {
                let selected = chosen.contains(&l);
                changed |= state.layers[l].selected != selected;
                state.layers[l].selected = selected;
            }
            changed
        }
        Command::SetWindowN { metric, n } => {
            let metric: Metric = metric.parse().map_err(ControlError::UnknownMetric)?;
            if *n == 0 {
                return Err(ControlError::ZeroWindow);
            }
            let slot = match metric {
                Metric::Procs => &mut state.windows.procs,
                Metric::Ibtx => &mut state.windows.ibtx,
            };
            let changed = *slot != *n;
            *slot = *n;
            changed
        }
    };
    if changed {
        state.bump();
    }
    debug_assert!(state.version == before_version + changed as u64);
    Ok(Reply::Ack(Ack {
        cmd: cmd.name(),
        version: state.version,
        changed,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStatus {
    pub id: Layer,
    pub paused: bool,
    pub selected: bool,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionStatus {
    pub id: String,
    pub layer: Layer,
    pub scaled_procs: f64,
    pub mem: f64,
    pub scaled_ibtx: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowStatus {
    pub procs: usize,
    pub ibtx: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "state")]
pub struct StatusMessage {
    pub version: u64,
    pub mode: Mode,
    /// Round-robin phase: a layer id or `"tutti"`.
    pub phase: String,
    pub foreground: Option<Layer>,
    pub layers: Vec<LayerStatus>,
    pub partitions: Vec<PartitionStatus>,
    pub window: WindowStatus,
}

impl StatusMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("status serialization is infallible")
    }
}

pub fn snapshot_state(state: &EngineState) -> StatusMessage {
    let phase = match state.round_robin.phase() {
        Phase::Foreground(l) => l.id().to_string(),
        Phase::Tutti => "tutti".to_string(),
    };
    let foreground = match state.mode {
        Mode::RoundRobin => state.round_robin.foreground(),
        Mode::FullDisplay => None,
    };
    StatusMessage {
        version: state.version,
        mode: state.mode,
        phase,
        foreground,
        layers: Layer::ALL
            .iter()
            .map(|&l| LayerStatus {
                id: l,
                paused: state.layers[l].paused,
                selected: state.layers[l].selected,
                role: state.role(l),
            })
            .collect(),
        partitions: state
            .partitions
            .iter()
            .map(|p| PartitionStatus {
                id: p.partition.clone(),
                layer: p.layer,
                scaled_procs: p.scaled_procs,
                mem: p.memusage,
                scaled_ibtx: p.scaled_ibtx,
            })
            .collect(),
        window: WindowStatus {
            procs: state.windows.procs,
            ibtx: state.windows.ibtx,
        },
    }
}
