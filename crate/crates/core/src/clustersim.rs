//! Synthetic cluster producing metric batches in the wire format.
//!
//! Each node follows a three-state Markov chain (idle, busy, io-heavy) with a
//! dwell time in batches; metric levels are redrawn from per-state uniform
//! ranges whenever the node makes a transition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::{Batch, NodeMetrics, PartitionTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Idle,
    Busy,
    IoHeavy,
}

impl Activity {
    pub const ALL: [Activity; 3] = [Activity::Idle, Activity::Busy, Activity::IoHeavy];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Inclusive uniform ranges for one activity state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRanges {
    pub procs: (u64, u64),
    pub mem: (f64, f64),
    pub ibtx: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimConfigError {
    #[error("transition row for {0:?} does not sum to 1 (sum {1})")]
    RowSum(Activity, f64),
    #[error("transition row for {0:?} has a negative entry")]
    NegativeProbability(Activity),
    #[error("idle nodes must report zero processes")]
    IdleProcs,
    #[error("range `{0}` is empty or out of bounds")]
    BadRange(&'static str),
    #[error("batch interval must be positive")]
    BadInterval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub table: PartitionTable,
    /// `transitions[from][to]`, indexed by [`Activity::index`].
    pub transitions: [[f64; 3]; 3],
    pub levels: [LevelRanges; 3],
    /// Inclusive dwell range in batches.
    pub dwell: (u32, u32),
    pub seed: u64,
    /// Seconds between batches.
    pub batch_interval: f64,
    /// Timestamp of the first batch, in Unix seconds.
    pub start_ts: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            table: PartitionTable::reference(),
            transitions: [[0.6, 0.3, 0.1], [0.2, 0.6, 0.2], [0.1, 0.5, 0.4]],
            levels: [
                LevelRanges {
                    procs: (0, 0),
                    mem: (0.0, 0.05),
                    ibtx: (0.0, 0.0),
                },
                LevelRanges {
                    procs: (10, 200),
                    mem: (0.2, 0.9),
                    ibtx: (0.0, 1e6),
                },
                LevelRanges {
                    procs: (10, 200),
                    mem: (0.2, 0.9),
                    ibtx: (1e7, 1e9),
                },
            ],
            dwell: (1, 4),
            seed: 0,
            batch_interval: 15.0,
            start_ts: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimConfigError> {
        for activity in Activity::ALL {
            let row = &self.transitions[activity.index()];
            if row.iter().any(|p| p.is_nan() || *p < 0.0) {
                return Err(SimConfigError::NegativeProbability(activity));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(SimConfigError::RowSum(activity, sum));
            }
        }
        if self.levels[Activity::Idle.index()].procs != (0, 0) {
            return Err(SimConfigError::IdleProcs);
        }
        for l in &self.levels {
            if l.procs.0 > l.procs.1 {
                return Err(SimConfigError::BadRange("procs"));
            }
            if !(0.0 <= l.mem.0 && l.mem.0 <= l.mem.1 && l.mem.1 <= 1.0) {
                return Err(SimConfigError::BadRange("mem"));
            }
            if !(0.0 <= l.ibtx.0 && l.ibtx.0 <= l.ibtx.1 && l.ibtx.1.is_finite()) {
                return Err(SimConfigError::BadRange("ibtx"));
            }
        }
        if self.dwell.0 == 0 || self.dwell.0 > self.dwell.1 {
            return Err(SimConfigError::BadRange("dwell"));
        }
        if !(self.batch_interval > 0.0 && self.batch_interval.is_finite()) {
            return Err(SimConfigError::BadInterval);
        }
        Ok(())
    }

    /// Stationary distribution of the activity chain, by power iteration.
    pub fn stationary(&self) -> [f64; 3] {
        let mut pi = [1.0 / 3.0; 3];
        for _ in 0..10_000 {
            let mut next = [0.0; 3];
            for (from, p) in pi.iter().enumerate() {
                for (to, slot) in next.iter_mut().enumerate() {
                    *slot += p * self.transitions[from][to];
                }
            }
            let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if delta < 1e-15 {
                break;
            }
        }
        pi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSimState {
    pub node_id: String,
    pub partition_id: String,
    pub activity: Activity,
    pub procs_level: u64,
    pub mem_level: f64,
    pub ibtx_level: f64,
    pub dwell_remaining: u32,
}

impl NodeSimState {
    pub fn metrics(&self) -> NodeMetrics {
        NodeMetrics {
            id: self.node_id.clone(),
            partition: self.partition_id.clone(),
            procs: self.procs_level,
            mem: self.mem_level,
            ibtx: self.ibtx_level,
        }
    }
}

fn draw_activity<R: Rng>(row: &[f64; 3], rng: &mut R) -> Activity {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for activity in Activity::ALL {
        acc += row[activity.index()];
        if u < acc {
            return activity;
        }
    }
    // Rounding left u above the cumulative sum; take the last state with mass.
    Activity::ALL
        .into_iter()
        .rev()
        .find(|a| row[a.index()] > 0.0)
        .unwrap_or(Activity::Idle)
}

fn draw_f64<R: Rng>((lo, hi): (f64, f64), rng: &mut R) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Sets `state` to `activity` with freshly drawn levels and dwell.
fn enter<R: Rng>(state: &mut NodeSimState, activity: Activity, cfg: &SimConfig, rng: &mut R) {
    let levels = &cfg.levels[activity.index()];
    state.activity = activity;
    state.procs_level = rng.random_range(levels.procs.0..=levels.procs.1);
    state.mem_level = draw_f64(levels.mem, rng);
    state.ibtx_level = draw_f64(levels.ibtx, rng);
    state.dwell_remaining = rng.random_range(cfg.dwell.0..=cfg.dwell.1);
}

/// Advances one node by one batch.
pub fn node_transition<R: Rng>(state: &NodeSimState, cfg: &SimConfig, rng: &mut R) -> NodeSimState {
    let mut next = state.clone();
    next.dwell_remaining = next.dwell_remaining.saturating_sub(1);
    if next.dwell_remaining == 0 {
        let activity = draw_activity(&cfg.transitions[state.activity.index()], rng);
        enter(&mut next, activity, cfg, rng);
    }
    next
}

/// The whole synthetic cluster.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: SimConfig,
    nodes: Vec<NodeSimState>,
    rng: ChaCha8Rng,
    seq: u64,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self, SimConfigError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let stationary = cfg.stationary();
        let mut nodes = Vec::with_capacity(cfg.table.total_nodes());
        for spec in cfg.table.entries() {
            for i in 0..spec.nodes {
                let mut state = NodeSimState {
                    node_id: format!("{}-n{:02}", spec.id, i),
                    partition_id: spec.id.clone(),
                    activity: Activity::Idle,
                    procs_level: 0,
                    mem_level: 0.0,
                    ibtx_level: 0.0,
                    dwell_remaining: 0,
                };
                let activity = draw_activity(&stationary, &mut rng);
                enter(&mut state, activity, &cfg, &mut rng);
                nodes.push(state);
            }
        }
        Ok(Self {
            cfg,
            nodes,
            rng,
            seq: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn nodes(&self) -> &[NodeSimState] {
        &self.nodes
    }

    /// Forces every node into `activity` with fresh levels.
    pub fn force_all(&mut self, activity: Activity) {
        for node in &mut self.nodes {
            enter(node, activity, &self.cfg, &mut self.rng);
        }
    }

    /// Advances every node and emits the next batch.
    pub fn step(&mut self) -> Batch {
        for node in &mut self.nodes {
            *node = node_transition(node, &self.cfg, &mut self.rng);
        }
        self.seq += 1;
        Batch {
            seq: self.seq,
            ts: self.cfg.start_ts + (self.seq - 1) as f64 * self.cfg.batch_interval,
            nodes: self.nodes.iter().map(NodeSimState::metrics).collect(),
        }
    }
}

impl Iterator for Simulator {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        Some(self.step())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{encode_batch, parse_batch_message, IngestStats};

    fn idle_state() -> NodeSimState {
        NodeSimState {
            node_id: "n".into(),
            partition_id: "cpu_sky".into(),
            activity: Activity::Idle,
            procs_level: 0,
            mem_level: 0.01,
            ibtx_level: 0.0,
            dwell_remaining: 1,
        }
    }

    #[test]
    fn absorbing_idle_stays_idle() {
        let mut cfg = SimConfig::default();
        cfg.transitions[0] = [1.0, 0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = idle_state();
        for _ in 0..200 {
            s = node_transition(&s, &cfg, &mut rng);
            assert_eq!(s.activity, Activity::Idle);
            assert_eq!(s.procs_level, 0);
            assert!((0.0..=0.05).contains(&s.mem_level));
        }
    }

    #[test]
    fn transition_only_when_dwell_expires() {
        let cfg = SimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = idle_state();
        s.dwell_remaining = 3;
        s.activity = Activity::Busy;
        s.procs_level = 77;
        let s1 = node_transition(&s, &cfg, &mut rng);
        let s2 = node_transition(&s1, &cfg, &mut rng);
        assert_eq!((s1.dwell_remaining, s1.procs_level), (2, 77));
        assert_eq!((s2.dwell_remaining, s2.procs_level), (1, 77));
        let s3 = node_transition(&s2, &cfg, &mut rng);
        assert!((1..=4).contains(&s3.dwell_remaining));
    }

    #[test]
    fn io_heavy_traffic_exceeds_idle() {
        let mut cfg = SimConfig::default();
        cfg.transitions[1] = [0.0, 0.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = idle_state();
        s.activity = Activity::Busy;
        let s = node_transition(&s, &cfg, &mut rng);
        assert_eq!(s.activity, Activity::IoHeavy);
        let (lo, hi) = cfg.levels[Activity::IoHeavy.index()].ibtx;
        assert!(s.ibtx_level >= lo && s.ibtx_level <= hi);
        assert!(s.ibtx_level > cfg.levels[Activity::Idle.index()].ibtx.1);
    }

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<String> = Simulator::new(SimConfig::default()).unwrap().take(20).map(|b| encode_batch(&b)).collect();
        let b: Vec<String> = Simulator::new(SimConfig::default()).unwrap().take(20).map(|b| encode_batch(&b)).collect();
        assert_eq!(a, b);
        let c: Vec<String> = Simulator::new(SimConfig { seed: 1, ..SimConfig::default() })
            .unwrap()
            .take(20)
            .map(|b| encode_batch(&b))
            .collect();
        assert_ne!(a, c);
    }

    #[test]
    fn reference_batch_shape_and_spacing() {
        let mut sim = Simulator::new(SimConfig::default()).unwrap();
        let batches: Vec<Batch> = (0..4).map(|_| sim.step()).collect();
        for (i, b) in batches.iter().enumerate() {
            assert_eq!(b.nodes.len(), 95);
            assert_eq!(b.seq, i as u64 + 1);
        }
        for w in batches.windows(2) {
            assert_eq!(w[1].ts - w[0].ts, 15.0);
        }
    }

    #[test]
    fn all_idle_reports_zero_procs() {
        let cfg = SimConfig { transitions: [[1.0, 0.0, 0.0]; 3], ..SimConfig::default() };
        let mut sim = Simulator::new(cfg).unwrap();
        sim.force_all(Activity::Idle);
        let b = sim.step();
        assert!(b.nodes.iter().all(|n| n.procs == 0));
    }

    #[test]
    fn emitted_messages_parse() {
        let table = PartitionTable::reference();
        let mut stats = IngestStats::default();
        for b in Simulator::new(SimConfig::default()).unwrap().take(50) {
            let parsed = parse_batch_message(encode_batch(&b).as_bytes(), &table, &mut stats).unwrap();
            assert_eq!(parsed, b);
        }
        assert_eq!(stats, IngestStats::default());
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimConfig::default();
        cfg.transitions[2] = [0.5, 0.5, 0.5];
        assert!(matches!(cfg.validate(), Err(SimConfigError::RowSum(Activity::IoHeavy, _))));
        let mut cfg = SimConfig::default();
        cfg.levels[0].procs = (0, 3);
        assert_eq!(cfg.validate(), Err(SimConfigError::IdleProcs));
        let mut cfg = SimConfig::default();
        cfg.levels[1].mem = (0.5, 1.5);
        assert_eq!(cfg.validate(), Err(SimConfigError::BadRange("mem")));
        let cfg = SimConfig { dwell: (0, 2), ..SimConfig::default() };
        assert_eq!(cfg.validate(), Err(SimConfigError::BadRange("dwell")));
    }
}
