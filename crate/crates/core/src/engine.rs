//! Batch processing: scaling, mapping, presentation and scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{self, Command, ControlError, EngineState, Mode, Reply, StatusMessage};
use crate::layer::Layer;
use crate::mapping::{map_partition, LayerParams, MappingConfig};
use crate::normalize::{Metric, Normalizer, ScalerConfig};
use crate::protocol::{IngestedBatch, PartitionTable};
use crate::sequencer::{schedule_batch, LayerEvent, PresentationConfig, RoundRobinState, Transport};

/// Stream id reserved for presentation draws; layer streams use the low
/// four bits of `batch << 4 | layer`.
const PRESENTATION_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EngineConfig {
    pub seed: u64,
    pub table: PartitionTable,
    pub transport: Transport,
    pub scaler: ScalerConfig,
    pub mapping: MappingConfig,
    pub presentation: PresentationConfig,
}

/// The events of one batch, ready for rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledBatch {
    /// Position in the engine's own batch count, from 0.
    pub index: u64,
    pub seq: u64,
    pub layers: Vec<LayerParams>,
    pub events: Vec<LayerEvent>,
}

impl ScheduledBatch {
    /// Seconds from the start of the run to the start of this batch.
    pub fn start_time(&self, transport: &Transport) -> f64 {
        self.index as f64 * transport.batch_interval
    }

    pub fn records(&self, transport: &Transport) -> impl Iterator<Item = EventRecord> + '_ {
        let start = self.start_time(transport);
        self.events.iter().map(move |e| EventRecord::new(e, start))
    }
}

/// One line of the event log. Field order is part of the format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time_s: f64,
    pub layer: Layer,
    pub step: u8,
    pub rate: f64,
    pub gain: f64,
    pub reverb: f64,
    pub delay: f64,
    pub flags: Vec<String>,
}

pub const IDLE_ECHO_FLAG: &str = "idle-echo";

impl EventRecord {
    pub fn new(event: &LayerEvent, batch_start: f64) -> Self {
        Self {
            time_s: batch_start + event.onset,
            layer: event.layer,
            step: event.step,
            rate: event.rate,
            gain: event.gain,
            reverb: event.fx.reverb,
            delay: event.fx.delay,
            flags: if event.idle_echo {
                vec![IDLE_ECHO_FLAG.to_string()]
            } else {
                Vec::new()
            },
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event serialization is infallible")
    }
}

/// Owns everything downstream of ingestion for one run.
#[derive(Debug, Clone)]
pub struct Engine {
    cfg: EngineConfig,
    normalizer: Normalizer,
    state: EngineState,
    presentation_rng: ChaCha8Rng,
    batches: u64,
    current: Option<ScheduledBatch>,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Self {
        let mut presentation_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        presentation_rng.set_stream(PRESENTATION_STREAM);
        let round_robin = RoundRobinState::new(cfg.presentation.background_probability, &mut presentation_rng);
        let normalizer = Normalizer::new(cfg.scaler, cfg.table.len()).expect("scaler config validated");
        Self {
            state: EngineState::new(round_robin, cfg.scaler),
            normalizer,
            presentation_rng,
            batches: 0,
            current: None,
            cfg,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn batches_processed(&self) -> u64 {
        self.batches
    }

    pub fn current(&self) -> Option<&ScheduledBatch> {
        self.current.as_ref()
    }

    pub fn snapshot(&self) -> StatusMessage {
        self.state.snapshot()
    }

    /// Turns one ingested batch into its event schedule.
    ///
    /// Round-robin advances once per batch (not on the first), so the state
    /// always describes the batch currently sounding.
    pub fn process(&mut self, batch: &IngestedBatch) -> &ScheduledBatch {
        if self.batches > 0 && self.state.mode == Mode::RoundRobin {
            self.state.round_robin.advance(&mut self.presentation_rng);
        }
        let index = self.batches;
        self.batches += 1;

        let params = self.normalizer.scale(&batch.partitions, batch.seq);
        let layers: Vec<LayerParams> = params
            .iter()
            .map(|p| map_partition(p, &self.cfg.mapping, self.cfg.seed, index))
            .collect();
        self.state.partitions = params;
        self.state.bump();

        let events = schedule_batch(&layers, &self.state, &self.cfg.transport, &self.cfg.presentation);
        self.current.insert(ScheduledBatch {
            index,
            seq: batch.seq,
            layers,
            events,
        })
    }

    /// Applies an operator command. When presentation changed, the current
    /// batch is rescheduled with the new gains and returned so the caller
    /// can hand it to the audio path.
    pub fn apply_command(&mut self, cmd: &Command) -> Result<(Reply, Option<&ScheduledBatch>), ControlError> {
        let reply = control::apply_command(&mut self.state, cmd)?;
        let changed = matches!(&reply, Reply::Ack(ack) if ack.changed);
        if !changed {
            return Ok((reply, None));
        }
        if let Command::SetWindowN { metric, n } = cmd {
            let metric: Metric = metric.parse().map_err(ControlError::UnknownMetric)?;
            self.normalizer.set_window(metric, *n).map_err(|_| ControlError::ZeroWindow)?;
            return Ok((reply, None));
        }
        let Some(current) = self.current.as_mut() else {
            return Ok((reply, None));
        };
        current.events = schedule_batch(&current.layers, &self.state, &self.cfg.transport, &self.cfg.presentation);
        Ok((reply, Some(&*current)))
    }
}
