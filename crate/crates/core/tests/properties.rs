use clustertone_core::layer::Layer;
use clustertone_core::mapping::{
    default_basic_pattern, extra_onset_count, layer_rng, map_mem_to_rate_curve, map_procs_to_pattern, LayerPattern,
    StepMask, DEFAULT_IDLE_THRESHOLD, STEPS,
};
use clustertone_core::normalize::MovingWindow;
use clustertone_core::protocol::{
    aggregate_partition, average_with_previous, encode_batch, parse_batch_message, Batch, IngestStats,
    NodeMetrics, PartitionTable, SmoothedBatch,
};
use proptest::prelude::*;

fn brute_max(history: &[f64], n: usize) -> f64 {
    history.iter().rev().take(n).fold(0.0, |m, &v| m.max(v))
}

fn node_strategy() -> impl Strategy<Value = (u64, f64, f64)> {
    (0u64..64, 0.0f64..=1.0, 0.0f64..1e9)
}

fn reference_batch(seq: u64, values: &[(u64, f64, f64)]) -> Batch {
    let table = PartitionTable::reference();
    let mut nodes = Vec::new();
    let mut k = 0;
    'outer: for spec in table.entries() {
        for i in 0..spec.nodes {
            let Some(&(procs, mem, ibtx)) = values.get(k) else {
                break 'outer;
            };
            nodes.push(NodeMetrics {
                id: format!("{}-{i}", spec.id),
                partition: spec.id.clone(),
                procs,
                mem,
                ibtx,
            });
            k += 1;
        }
    }
    Batch {
        seq,
        ts: 1.7e9 + seq as f64 * 15.0,
        nodes,
    }
}

proptest! {
    #[test]
    fn window_matches_scan(values in prop::collection::vec(0.0f64..1e6, 1..200), n in 1usize..20) {
        let mut w = MovingWindow::new(n).unwrap();
        let mut seen = Vec::new();
        for v in values {
            w.push(v);
            seen.push(v);
            let max = brute_max(&seen, n);
            prop_assert_eq!(w.max(), max);
            let scaled = w.scale(v, false);
            prop_assert!((0.0..=1.0).contains(&scaled));
            if max > 0.0 {
                prop_assert_eq!(scaled == 1.0, v == max);
            }
        }
    }

    #[test]
    fn constant_stream_scales_to_one(v in 1e-6f64..1e9, n in 1usize..16, pushes in 1usize..40) {
        let mut w = MovingWindow::new(n).unwrap();
        for _ in 0..pushes {
            prop_assert_eq!(w.push_and_scale(v), 1.0);
        }
    }

    #[test]
    fn zoomed_scale_stays_in_unit_range(values in prop::collection::vec(0.0f64..1e3, 1..64)) {
        let mut w = MovingWindow::new(8).unwrap();
        for v in values {
            w.push(v);
            let s = w.scale(v, true);
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn averaging_is_bounded(
        prev in prop::collection::vec(node_strategy(), 1..95),
        cur in prop::collection::vec(node_strategy(), 1..95),
    ) {
        let previous = average_with_previous(&reference_batch(1, &prev), None);
        let current = reference_batch(2, &cur);
        let out = average_with_previous(&current, Some(&previous));
        for reading in &out.nodes {
            let p = previous.nodes.iter().find(|n| n.id == reading.id);
            let c = current.nodes.iter().find(|n| n.id == reading.id);
            let pairs = match (p, c) {
                (Some(p), Some(c)) => [
                    (p.procs, c.procs as f64, reading.procs),
                    (p.mem, c.mem, reading.mem),
                    (p.ibtx, c.ibtx, reading.ibtx),
                ],
                (Some(p), None) => [(p.procs, p.procs, reading.procs), (p.mem, p.mem, reading.mem), (p.ibtx, p.ibtx, reading.ibtx)],
                (None, Some(c)) => {
                    let procs = c.procs as f64;
                    [(procs, procs, reading.procs), (c.mem, c.mem, reading.mem), (c.ibtx, c.ibtx, reading.ibtx)]
                }
                (None, None) => unreachable!("output node from nowhere"),
            };
            for (a, b, got) in pairs {
                prop_assert!(got >= a.min(b) && got <= a.max(b), "{got} outside [{a}, {b}]");
            }
        }
    }

    #[test]
    fn aggregate_has_one_row_per_partition(cur in prop::collection::vec(node_strategy(), 0..95)) {
        let table = PartitionTable::reference();
        let smoothed: SmoothedBatch = average_with_previous(&reference_batch(1, &cur), None);
        let rows = aggregate_partition(&smoothed, &table);
        prop_assert_eq!(rows.len(), table.len());
        let reporting: usize = rows.iter().map(|r| r.reporting).sum();
        prop_assert_eq!(reporting, cur.len());
    }

    #[test]
    fn encode_parse_round_trip(cur in prop::collection::vec(node_strategy(), 0..95), seq in 0u64..1_000_000) {
        let table = PartitionTable::reference();
        let batch = reference_batch(seq, &cur);
        let mut stats = IngestStats::default();
        let once = parse_batch_message(encode_batch(&batch).as_bytes(), &table, &mut stats).unwrap();
        prop_assert_eq!(&once, &batch);
        let twice = parse_batch_message(encode_batch(&once).as_bytes(), &table, &mut stats).unwrap();
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn onset_count_is_monotone(a in 0.1f64..=1.0, b in 0.1f64..=1.0, layer in 0usize..10) {
        let layer = Layer::from_index(layer).unwrap();
        let free = STEPS - default_basic_pattern(layer).count();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(
            extra_onset_count(lo, DEFAULT_IDLE_THRESHOLD, free) <= extra_onset_count(hi, DEFAULT_IDLE_THRESHOLD, free)
        );
    }

    #[test]
    fn basic_is_subset_of_onsets(s in 0.1f64..=1.0, layer in 0usize..10, batch in 0u64..10_000, seed: u64) {
        let layer = Layer::from_index(layer).unwrap();
        let basic = default_basic_pattern(layer);
        let mut rng = layer_rng(seed, batch, layer);
        match map_procs_to_pattern(layer, s, basic, DEFAULT_IDLE_THRESHOLD, &mut rng) {
            LayerPattern::Active(p) => {
                prop_assert!(basic.is_subset_of(p.onsets));
                let free = STEPS - basic.count();
                prop_assert_eq!(p.onsets.count(), basic.count() + extra_onset_count(s, DEFAULT_IDLE_THRESHOLD, free));
            }
            LayerPattern::Idle(_) => prop_assert!(false, "{s} should not be idle"),
        }
    }

    #[test]
    fn rate_curve_starts_at_one_and_rises(mem in 0.0f64..=1.0, onsets in 1usize..=32, ramp in 0.0f64..4.0) {
        let curve = map_mem_to_rate_curve(mem, onsets, ramp);
        prop_assert_eq!(curve.len(), onsets);
        prop_assert_eq!(curve[0], 1.0);
        for pair in curve.windows(2) {
            prop_assert!(pair[0] <= pair[1]);
        }
    }

    #[test]
    fn step_mask_round_trip(bits: u32) {
        let steps: Vec<usize> = (0..32).filter(|s| bits & (1 << s) != 0).collect();
        let mask = StepMask::from_steps(&steps).unwrap();
        prop_assert_eq!(mask.bits(), bits);
        prop_assert_eq!(mask.steps().collect::<Vec<_>>(), steps);
        prop_assert_eq!(mask.count() + mask.complement().count(), 32);
        let json = serde_json::to_string(&mask).unwrap();
        prop_assert_eq!(serde_json::from_str::<StepMask>(&json).unwrap(), mask);
    }
}

#[test]
fn spike_leaves_window_after_exactly_n_pushes() {
    let mut w = MovingWindow::new(8).unwrap();
    for _ in 0..8 {
        w.push(1.0);
    }
    w.push(100.0);
    for k in 1..=8 {
        w.push(1.0);
        let expected = if k < 8 { 100.0 } else { 1.0 };
        assert_eq!(w.max(), expected, "after {k} pushes");
    }
}
