//! File configuration (TOML). Every key is optional; a missing key takes
//! its built-in default, an unknown key is an error.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{AudioConfig, SampleBuffer, SampleError};
use crate::engine::EngineConfig;
use crate::layer::{Layer, PerLayer};
use crate::mapping::{default_basic_pattern, MappingConfig, StepMask, DEFAULT_IDLE_THRESHOLD, DEFAULT_MAX_RATE_RAMP};
use crate::normalize::ScalerConfig;
use crate::protocol::{reference_partitions, PartitionSpec, PartitionTable};
use crate::sequencer::{PresentationConfig, Transport, DEFAULT_BATCH_INTERVAL, DEFAULT_BPM};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7070";
pub const DEFAULT_CONTROL: &str = "127.0.0.1:7071";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingSection {
    pub idle_threshold: f64,
    pub max_rate_ramp: f64,
    /// Per-layer overrides; layers not listed keep their default pattern.
    pub basic_patterns: BTreeMap<Layer, StepMask>,
}

impl Default for MappingSection {
    fn default() -> Self {
        Self {
            idle_threshold: DEFAULT_IDLE_THRESHOLD,
            max_rate_ramp: DEFAULT_MAX_RATE_RAMP,
            basic_patterns: Layer::ALL.iter().map(|&l| (l, default_basic_pattern(l))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Metrics ingestion socket.
    pub listen: String,
    /// Operator control socket (line protocol and WebSocket).
    pub control: String,
    /// Directory of static web UI files served on the control port.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub serve_ui: Option<PathBuf>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            listen: DEFAULT_LISTEN.into(),
            control: DEFAULT_CONTROL.into(),
            serve_ui: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub audio: PathBuf,
    pub events: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            audio: "clustertone.wav".into(),
            events: "clustertone-events.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub bpm: f64,
    pub batch_interval: f64,
    pub window: ScalerConfig,
    pub mapping: MappingSection,
    pub presentation: PresentationConfig,
    pub audio: AudioConfig,
    pub network: NetworkConfig,
    pub output: OutputConfig,
    /// WAV files replacing the built-in sound of a layer.
    pub samples: BTreeMap<Layer, PathBuf>,
    pub partitions: Vec<PartitionSpec>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            bpm: DEFAULT_BPM,
            batch_interval: DEFAULT_BATCH_INTERVAL,
            window: ScalerConfig::default(),
            mapping: MappingSection::default(),
            presentation: PresentationConfig::default(),
            audio: AudioConfig::default(),
            network: NetworkConfig::default(),
            output: OutputConfig::default(),
            samples: BTreeMap::new(),
            partitions: reference_partitions(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses and validates. Partial basic-pattern tables are completed
    /// with the defaults, so the result always lists every layer.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: Config = toml::from_str(text)?;
        for layer in Layer::ALL {
            cfg.mapping
                .basic_patterns
                .entry(layer)
                .or_insert_with(|| default_basic_pattern(layer));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.bpm.is_finite() && self.bpm > 0.0 && self.bpm <= 1000.0) {
            return Err(invalid("bpm", format!("{} must be in (0, 1000]", self.bpm)));
        }
        if !(self.batch_interval.is_finite() && self.batch_interval > 0.0) {
            return Err(invalid("batch_interval", "must be a positive number of seconds"));
        }
        if self.transport().cycles_per_batch() == 0 {
            return Err(invalid(
                "batch_interval",
                format!(
                    "{} s is shorter than one {:.3} s pattern cycle",
                    self.batch_interval,
                    self.transport().pattern_duration()
                ),
            ));
        }
        if self.window.procs == 0 {
            return Err(invalid("window.procs", "window length must be at least 1"));
        }
        if self.window.ibtx == 0 {
            return Err(invalid("window.ibtx", "window length must be at least 1"));
        }
        let t = self.mapping.idle_threshold;
        if !(0.0..1.0).contains(&t) {
            return Err(invalid("mapping.idle_threshold", format!("{t} must be in [0, 1)")));
        }
        let r = self.mapping.max_rate_ramp;
        if !(r.is_finite() && r >= 0.0) {
            return Err(invalid("mapping.max_rate_ramp", format!("{r} must be non-negative")));
        }
        let p = &self.presentation;
        if !(0.0..=1.0).contains(&p.background_probability) {
            return Err(invalid("presentation.background_probability", "must be in [0, 1]"));
        }
        for (key, g) in [
            ("presentation.background_gain", p.background_gain),
            ("presentation.foreground_gain", p.foreground_gain),
        ] {
            if !(g.is_finite() && g >= 0.0) {
                return Err(invalid(key, format!("{g} must be non-negative")));
            }
        }
        self.audio
            .validate()
            .map_err(|e| invalid(format!("audio.{}", e.key), e.message))?;
        for (key, addr) in [("network.listen", &self.network.listen), ("network.control", &self.network.control)] {
            addr.parse::<SocketAddr>()
                .map_err(|e| invalid(key, format!("`{addr}`: {e}")))?;
        }
        self.table()?;
        Ok(())
    }

    pub fn table(&self) -> Result<PartitionTable, ConfigError> {
        PartitionTable::new(self.partitions.clone()).map_err(|e| invalid("partitions", e.to_string()))
    }

    pub fn transport(&self) -> Transport {
        Transport {
            bpm: self.bpm,
            batch_interval: self.batch_interval,
        }
    }

    pub fn mapping_config(&self) -> MappingConfig {
        let mut m = MappingConfig {
            idle_threshold: self.mapping.idle_threshold,
            max_rate_ramp: self.mapping.max_rate_ramp,
            ..MappingConfig::default()
        };
        for (&layer, &mask) in &self.mapping.basic_patterns {
            m.basic_patterns[layer] = mask;
        }
        m
    }

    /// Engine settings; assumes the config was validated.
    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            seed: self.seed,
            table: self.table().expect("validated partition table"),
            transport: self.transport(),
            scaler: self.window,
            mapping: self.mapping_config(),
            presentation: self.presentation,
        }
    }

    /// Loads the configured sample overrides.
    pub fn load_samples(&self) -> Result<PerLayer<Option<SampleBuffer>>, SampleError> {
        let mut out = PerLayer(std::array::from_fn(|_| None));
        for (&layer, path) in &self.samples {
            out[layer] = Some(SampleBuffer::load_wav(path)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c, Config::default());
        let e = c.engine_config();
        assert_eq!(e.table.len(), 10);
        assert_eq!(e.table.total_nodes(), 95);
        assert_eq!(c.bpm, 128.0);
        assert_eq!(c.window.procs, 8);
        assert_eq!(c.window.ibtx, 8);
        assert_eq!(c.mapping.idle_threshold, 0.1);
        assert_eq!(e.mapping, MappingConfig::default());
    }

    #[test]
    fn single_key_override() {
        let c = Config::parse("bpm = 140").unwrap();
        assert_eq!(c, Config { bpm: 140.0, ..Config::default() });
    }

    #[test]
    fn zero_window_names_key() {
        let err = Config::parse("[window]\nprocs = 0").unwrap_err();
        assert!(err.to_string().contains("window.procs"), "{err}");
        let err = Config::parse("[window]\nibtx = 0").unwrap_err();
        assert!(err.to_string().contains("window.ibtx"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Config::parse("tempo = 120").unwrap_err();
        assert!(err.to_string().contains("tempo"), "{err}");
        let err = Config::parse("[window]\nsize = 3").unwrap_err();
        assert!(err.to_string().contains("size"), "{err}");
    }

    #[test]
    fn nested_validation_names_key() {
        for (text, key) in [
            ("[audio]\nsample_rate = 22050", "audio.sample_rate"),
            ("[mapping]\nidle_threshold = 1.5", "mapping.idle_threshold"),
            ("[network]\nlisten = \"nowhere\"", "network.listen"),
            ("batch_interval = 1.0", "batch_interval"),
            ("[presentation]\nbackground_probability = 2.0", "presentation.background_probability"),
        ] {
            let err = Config::parse(text).unwrap_err().to_string();
            assert!(err.contains(key), "{text}: {err}");
        }
    }

    #[test]
    fn partial_patterns_merge_over_defaults() {
        let c = Config::parse("[mapping.basic_patterns]\nkick = [0, 16]").unwrap();
        let m = c.mapping_config();
        assert_eq!(m.basic_patterns[Layer::Kick].steps().collect::<Vec<_>>(), vec![0, 16]);
        assert_eq!(m.basic_patterns[Layer::Snare], default_basic_pattern(Layer::Snare));
        assert!(Config::parse("[mapping.basic_patterns]\nkick = [32]").is_err());
    }

    #[test]
    fn custom_partitions() {
        let c = Config::parse(
            "[[partitions]]\nid = \"a\"\nnodes = 2\nlayer = \"kick\"\n\n[[partitions]]\nid = \"b\"\nnodes = 1\nlayer = \"bass\"\n",
        )
        .unwrap();
        assert_eq!(c.table().unwrap().len(), 2);
        let dup = "[[partitions]]\nid = \"a\"\nnodes = 2\nlayer = \"kick\"\n\n[[partitions]]\nid = \"b\"\nnodes = 1\nlayer = \"kick\"\n";
        assert!(Config::parse(dup).unwrap_err().to_string().contains("partitions"));
    }

    #[test]
    fn round_trip_is_lossless() {
        let mut c = Config { seed: 99, bpm: 137.5, ..Config::default() };
        c.window.zoom = true;
        c.network.serve_ui = Some("ui".into());
        c.samples.insert(Layer::Clap, "clap.wav".into());
        c.mapping.basic_patterns.insert(Layer::Kick, StepMask::from_steps(&[0, 4]).unwrap());
        let text = c.to_toml();
        assert_eq!(Config::parse(&text).unwrap(), c);
        assert_eq!(Config::parse(&Config::default().to_toml()).unwrap(), Config::default());
    }
}
