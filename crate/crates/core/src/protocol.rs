//! Metrics wire format, batch smoothing and partition aggregation.
//!
//! A producer sends one JSON object per line:
//!
//! ```text
//! {"type":"batch","seq":7,"ts":1717000000.0,"nodes":[{"id":"n1","partition":"cpu_sky","procs":12,"mem":0.4,"ibtx":1.5e6}]}
//! ```
//!
//! The same line format is used for on-disk replay logs.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::layer::Layer;

/// Consecutive missing batches after which a node is treated as reporting zeros.
pub const MAX_STALE_BATCHES: u32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("empty message")]
    Empty,
    #[error("duplicate node id `{0}` in batch")]
    DuplicateNode(String),
    #[error("node `{node}`: field `{field}` is invalid ({value})")]
    InvalidField {
        node: String,
        field: &'static str,
        value: f64,
    },
    #[error("timestamp is not finite")]
    InvalidTimestamp,
    #[error("batch carries {got} nodes but the partition table has only {limit}")]
    TooManyNodes { got: usize, limit: usize },
    #[error("batch seq {0} was already accepted")]
    DuplicateSeq(u64),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TableError {
    #[error("partition table is empty")]
    Empty,
    #[error("partition `{0}` appears more than once")]
    DuplicatePartition(String),
    #[error("layer `{0}` is assigned to more than one partition")]
    DuplicateLayer(Layer),
    #[error("partition `{0}` has zero nodes")]
    NoNodes(String),
}

/// One row of the partition table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub id: String,
    pub nodes: u32,
    pub layer: Layer,
}

impl PartitionSpec {
    pub fn new(id: impl Into<String>, nodes: u32, layer: Layer) -> Self {
        Self {
            id: id.into(),
            nodes,
            layer,
        }
    }
}

/// Ordered partitions, each bound to exactly one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionTable {
    entries: Vec<PartitionSpec>,
    index: HashMap<String, usize>,
}

impl PartitionTable {
    pub fn new(entries: Vec<PartitionSpec>) -> Result<Self, TableError> {
        if entries.is_empty() {
            return Err(TableError::Empty);
        }
        let mut index = HashMap::with_capacity(entries.len());
        let mut layers = HashSet::new();
        for (i, entry) in entries.iter().enumerate() {
            if entry.nodes == 0 {
                return Err(TableError::NoNodes(entry.id.clone()));
            }
            if index.insert(entry.id.clone(), i).is_some() {
                return Err(TableError::DuplicatePartition(entry.id.clone()));
            }
            if !layers.insert(entry.layer) {
                return Err(TableError::DuplicateLayer(entry.layer));
            }
        }
        Ok(Self { entries, index })
    }

    /// The 10-partition, 95-node reference cluster.
    pub fn reference() -> Self {
        Self::new(reference_partitions()).expect("reference table is valid")
    }

    pub fn entries(&self) -> &[PartitionSpec] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, partition_id: &str) -> Option<usize> {
        self.index.get(partition_id).copied()
    }

    pub fn total_nodes(&self) -> usize {
        self.entries.iter().map(|e| e.nodes as usize).sum()
    }

    pub fn partition_for_layer(&self, layer: Layer) -> Option<&PartitionSpec> {
        self.entries.iter().find(|e| e.layer == layer)
    }
}

impl Default for PartitionTable {
    fn default() -> Self {
        Self::reference()
    }
}

pub fn reference_partitions() -> Vec<PartitionSpec> {
    vec![
        PartitionSpec::new("cpu_largemem", 8, Layer::Bass),
        PartitionSpec::new("cpu_sky", 48, Layer::FemaleVoice),
        PartitionSpec::new("cpu_zen3", 1, Layer::MaleVoice),
        PartitionSpec::new("cpu_zen4", 8, Layer::Chords),
        PartitionSpec::new("gpu+cpu_sky", 10, Layer::Kick),
        PartitionSpec::new("gpu+cpu_zen3", 3, Layer::SubBass),
        PartitionSpec::new("gpu+cpu_zen4", 13, Layer::Snare),
        PartitionSpec::new("gpu_2xh100+cpu_zen4", 1, Layer::Shaker),
        PartitionSpec::new("gpu_6xl40s+cpu_zen4", 2, Layer::HiHats),
        PartitionSpec::new("gpu_8xa40+cpu_zen4", 1, Layer::Clap),
    ]
}

/// Raw metrics of one node in one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeMetrics {
    pub id: String,
    pub partition: String,
    /// Running processes.
    pub procs: u64,
    /// Fraction of physical memory in use, in `[0, 1]`.
    pub mem: f64,
    /// Outgoing interconnect traffic in bytes per second.
    pub ibtx: f64,
}

/// One snapshot of node metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "WireMessage", into = "WireMessage")]
pub struct Batch {
    pub seq: u64,
    /// Unix seconds.
    pub ts: f64,
    pub nodes: Vec<NodeMetrics>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireBatch {
    seq: u64,
    ts: f64,
    nodes: Vec<NodeMetrics>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum WireMessage {
    Batch(WireBatch),
}

impl From<WireMessage> for Batch {
    fn from(m: WireMessage) -> Self {
        let WireMessage::Batch(b) = m;
        Batch {
            seq: b.seq,
            ts: b.ts,
            nodes: b.nodes,
        }
    }
}

impl From<Batch> for WireMessage {
    fn from(b: Batch) -> Self {
        WireMessage::Batch(WireBatch {
            seq: b.seq,
            ts: b.ts,
            nodes: b.nodes,
        })
    }
}

/// Counters for anomalies that do not reject a whole message.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub accepted: u64,
    pub rejected: u64,
    pub clamped_mem: u64,
    pub unknown_partition: u64,
    pub duplicate_seq: u64,
    pub seq_resets: u64,
}

/// Parses and validates one wire message.
///
/// Out-of-range `mem` values are clamped into `[0, 1]` and nodes of unknown
/// partitions are dropped; both are counted in `stats`.
pub fn parse_batch_message(
    raw: &[u8],
    table: &PartitionTable,
    stats: &mut IngestStats,
) -> Result<Batch, ProtocolError> {
    let text = raw.trim_ascii();
    if text.is_empty() {
        return Err(ProtocolError::Empty);
    }
    let mut batch: Batch = serde_json::from_slice(text)?;
    if !batch.ts.is_finite() {
        return Err(ProtocolError::InvalidTimestamp);
    }

    let mut seen = HashSet::with_capacity(batch.nodes.len());
    for node in &batch.nodes {
        if !seen.insert(node.id.as_str()) {
            return Err(ProtocolError::DuplicateNode(node.id.clone()));
        }
        if !(node.ibtx.is_finite() && node.ibtx >= 0.0) {
            return Err(ProtocolError::InvalidField {
                node: node.id.clone(),
                field: "ibtx",
                value: node.ibtx,
            });
        }
        if !node.mem.is_finite() {
            return Err(ProtocolError::InvalidField {
                node: node.id.clone(),
                field: "mem",
                value: node.mem,
            });
        }
    }

    let before = batch.nodes.len();
    batch.nodes.retain(|n| table.position(&n.partition).is_some());
    let dropped = before - batch.nodes.len();
    if dropped > 0 {
        tracing::warn!(seq = batch.seq, dropped, "dropping nodes of unknown partitions");
        stats.unknown_partition += dropped as u64;
    }
    if batch.nodes.len() > table.total_nodes() {
        return Err(ProtocolError::TooManyNodes {
            got: batch.nodes.len(),
            limit: table.total_nodes(),
        });
    }

    for node in &mut batch.nodes {
        if !(0.0..=1.0).contains(&node.mem) {
            tracing::warn!(node = %node.id, mem = node.mem, "clamping memory fraction");
            node.mem = node.mem.clamp(0.0, 1.0);
            stats.clamped_mem += 1;
        }
    }
    Ok(batch)
}

/// Serializes a batch as one wire line, without the trailing newline.
pub fn encode_batch(batch: &Batch) -> String {
    serde_json::to_string(batch).expect("batch serialization is infallible")
}

/// A node's metrics after smoothing with the previous batch.
///
/// `procs` is real-valued here since the mean of two counts need not be whole.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeReading {
    pub id: String,
    pub partition: String,
    pub procs: f64,
    pub mem: f64,
    pub ibtx: f64,
}

impl NodeReading {
    fn from_metrics(n: &NodeMetrics) -> Self {
        Self {
            id: n.id.clone(),
            partition: n.partition.clone(),
            procs: n.procs as f64,
            mem: n.mem,
            ibtx: n.ibtx,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedBatch {
    pub seq: u64,
    pub ts: f64,
    pub nodes: Vec<NodeReading>,
}

/// Averages `current` with the previous smoothed batch.
///
/// Nodes present in both are averaged metric by metric, nodes new in
/// `current` pass through, and nodes only in `previous` keep their previous
/// readings. Current nodes come first, in message order, followed by the
/// stale-filled ones in their previous order.
pub fn average_with_previous(current: &Batch, previous: Option<&SmoothedBatch>) -> SmoothedBatch {
    let Some(previous) = previous else {
        return SmoothedBatch {
            seq: current.seq,
            ts: current.ts,
            nodes: current.nodes.iter().map(NodeReading::from_metrics).collect(),
        };
    };

    let prev_by_id: HashMap<&str, &NodeReading> =
        previous.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
    let mut nodes: Vec<NodeReading> = current
        .nodes
        .iter()
        .map(|n| {
            let mut reading = NodeReading::from_metrics(n);
            if let Some(prev) = prev_by_id.get(n.id.as_str()) {
                reading.procs = (reading.procs + prev.procs) / 2.0;
                reading.mem = (reading.mem + prev.mem) / 2.0;
                reading.ibtx = (reading.ibtx + prev.ibtx) / 2.0;
            }
            reading
        })
        .collect();

    let current_ids: HashSet<&str> = current.nodes.iter().map(|n| n.id.as_str()).collect();
    nodes.extend(
        previous
            .nodes
            .iter()
            .filter(|n| !current_ids.contains(n.id.as_str()))
            .cloned(),
    );

    SmoothedBatch {
        seq: current.seq,
        ts: current.ts,
        nodes,
    }
}

/// Stateful smoothing: applies [`average_with_previous`] and treats nodes
/// missing for more than [`MAX_STALE_BATCHES`] consecutive batches as
/// reporting zeros.
#[derive(Debug, Default, Clone)]
pub struct BatchAverager {
    previous: Option<SmoothedBatch>,
    missing: HashMap<String, u32>,
}

impl BatchAverager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.previous = None;
        self.missing.clear();
    }

    pub fn previous(&self) -> Option<&SmoothedBatch> {
        self.previous.as_ref()
    }

    pub fn push(&mut self, current: &Batch) -> SmoothedBatch {
        let mut out = average_with_previous(current, self.previous.as_ref());
        let reported = current.nodes.len();
        for node in &current.nodes {
            self.missing.remove(&node.id);
        }
        for reading in out.nodes.iter_mut().skip(reported) {
            let count = self.missing.entry(reading.id.clone()).or_insert(0);
            *count += 1;
            if *count > MAX_STALE_BATCHES {
                // Averaging with a zero report.
                reading.procs /= 2.0;
                reading.mem /= 2.0;
                reading.ibtx /= 2.0;
            }
        }
        self.previous = Some(out.clone());
        out
    }
}

/// Raw per-partition summary of one smoothed batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionAggregate {
    pub partition: String,
    pub layer: Layer,
    pub procs: f64,
    pub mem: f64,
    pub ibtx: f64,
    pub reporting: usize,
}

/// Arithmetic mean over the nodes reporting for each partition, in table
/// order. Partitions with no reporting nodes yield zeros.
pub fn aggregate_partition(batch: &SmoothedBatch, table: &PartitionTable) -> Vec<PartitionAggregate> {
    let mut sums = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); table.len()];
    for node in &batch.nodes {
        if let Some(i) = table.position(&node.partition) {
            let s = &mut sums[i];
            s.0 += node.procs;
            s.1 += node.mem;
            s.2 += node.ibtx;
            s.3 += 1;
        }
    }
    table
        .entries()
        .iter()
        .zip(sums)
        .map(|(spec, (procs, mem, ibtx, count))| {
            let (procs, mem, ibtx) = if count == 0 {
                (0.0, 0.0, 0.0)
            } else {
                let n = count as f64;
                (procs / n, mem / n, ibtx / n)
            };
            PartitionAggregate {
                partition: spec.id.clone(),
                layer: spec.layer,
                procs,
                mem,
                ibtx,
                reporting: count,
            }
        })
        .collect()
}

/// One batch after parsing, smoothing and aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestedBatch {
    pub seq: u64,
    pub ts: f64,
    pub partitions: Vec<PartitionAggregate>,
    /// The producer restarted (seq went backwards) and smoothing was reset.
    pub restarted: bool,
}

/// The ingestion pipeline for one metrics stream.
#[derive(Debug, Clone)]
pub struct Ingestor {
    table: PartitionTable,
    averager: BatchAverager,
    last_seq: Option<u64>,
    stats: IngestStats,
}

impl Ingestor {
    pub fn new(table: PartitionTable) -> Self {
        Self {
            table,
            averager: BatchAverager::new(),
            last_seq: None,
            stats: IngestStats::default(),
        }
    }

    pub fn table(&self) -> &PartitionTable {
        &self.table
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    /// Parses and accepts one wire line.
    pub fn ingest_line(&mut self, raw: &[u8]) -> Result<IngestedBatch, ProtocolError> {
        match parse_batch_message(raw, &self.table, &mut self.stats) {
            Ok(batch) => self.accept(&batch),
            Err(e) => {
                self.stats.rejected += 1;
                Err(e)
            }
        }
    }

    /// Accepts a parsed batch. A repeated seq is rejected; a seq lower than
    /// the last accepted one means the producer restarted, so smoothing
    /// state is discarded before the batch is accepted.
    pub fn accept(&mut self, batch: &Batch) -> Result<IngestedBatch, ProtocolError> {
        let mut restarted = false;
        match self.last_seq {
            Some(last) if batch.seq == last => {
                self.stats.duplicate_seq += 1;
                self.stats.rejected += 1;
                return Err(ProtocolError::DuplicateSeq(batch.seq));
            }
            Some(last) if batch.seq < last => {
                tracing::info!(last, seq = batch.seq, "producer restart, resetting smoothing");
                self.averager.reset();
                self.stats.seq_resets += 1;
                restarted = true;
            }
            _ => {}
        }
        self.last_seq = Some(batch.seq);
        let smoothed = self.averager.push(batch);
        self.stats.accepted += 1;
        Ok(IngestedBatch {
            seq: batch.seq,
            ts: batch.ts,
            partitions: aggregate_partition(&smoothed, &self.table),
            restarted,
        })
    }
}
