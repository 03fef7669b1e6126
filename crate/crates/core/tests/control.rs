use clustertone_core::clustersim::{SimConfig, Simulator};
use clustertone_core::control::{parse_command, Command, Mode, Reply};
use clustertone_core::layer::Layer;
use clustertone_core::protocol::{Batch, Ingestor, PartitionTable};
use clustertone_core::{Engine, EngineConfig};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Step {
    Batch,
    Command(Command),
}

fn layer_id() -> impl Strategy<Value = String> {
    prop_oneof![
        8 => (0usize..10).prop_map(|i| Layer::from_index(i).unwrap().id().to_string()),
        1 => Just("theremin".to_string()),
    ]
}

fn command() -> impl Strategy<Value = Command> {
    prop_oneof![
        prop_oneof![Just(Mode::RoundRobin), Just(Mode::FullDisplay)].prop_map(|mode| Command::SetMode { mode }),
        layer_id().prop_map(|layer| Command::PauseLayer { layer }),
        layer_id().prop_map(|layer| Command::ResumeLayer { layer }),
        prop::collection::vec(layer_id(), 0..4).prop_map(|layers| Command::SelectLayers { layers }),
        (prop_oneof![Just("procs"), Just("ibtx"), Just("disk")], 0usize..12)
            .prop_map(|(m, n)| Command::SetWindowN { metric: m.to_string(), n }),
        Just(Command::GetState {}),
    ]
}

fn script() -> impl Strategy<Value = Vec<Step>> {
    prop::collection::vec(
        prop_oneof![1 => Just(Step::Batch), 2 => command().prop_map(Step::Command)],
        1..60,
    )
}

fn batches(n: usize) -> Vec<Batch> {
    Simulator::new(SimConfig {
        seed: 5,
        ..SimConfig::default()
    })
    .unwrap()
    .take(n)
    .collect()
}

struct Run {
    engine: Engine,
    ingestor: Ingestor,
}

impl Run {
    fn new() -> Self {
        Self {
            engine: Engine::new(EngineConfig::default()),
            ingestor: Ingestor::new(PartitionTable::reference()),
        }
    }

    fn feed(&mut self, batch: &Batch) {
        let b = self.ingestor.accept(batch).unwrap();
        self.engine.process(&b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replaying_the_command_log_reproduces_state(steps in script()) {
        let feed = batches(steps.len());
        let mut live = Run::new();
        let mut log: Vec<(usize, String)> = Vec::new();
        let mut fed = 0;
        for step in &steps {
            match step {
                Step::Batch => {
                    live.feed(&feed[fed]);
                    fed += 1;
                }
                Step::Command(cmd) => {
                    let raw = serde_json::to_string(cmd).unwrap();
                    if live.engine.apply_command(&parse_command(raw.as_bytes()).unwrap()).is_ok() {
                        log.push((fed, raw));
                    }
                }
            }
        }

        // Replay only the accepted commands, at the same batch positions.
        let mut replay = Run::new();
        let mut next = 0;
        for (at, raw) in &log {
            while next < *at {
                replay.feed(&feed[next]);
                next += 1;
            }
            replay.engine.apply_command(&parse_command(raw.as_bytes()).unwrap()).unwrap();
        }
        while next < fed {
            replay.feed(&feed[next]);
            next += 1;
        }
        prop_assert_eq!(replay.engine.snapshot(), live.engine.snapshot());
        prop_assert_eq!(replay.engine.current(), live.engine.current());
    }

    #[test]
    fn versions_count_state_changes(steps in script()) {
        let feed = batches(steps.len());
        let mut run = Run::new();
        let mut fed = 0;
        for step in &steps {
            let before = run.engine.snapshot();
            match step {
                Step::Batch => {
                    run.feed(&feed[fed]);
                    fed += 1;
                    prop_assert_eq!(run.engine.snapshot().version, before.version + 1);
                }
                Step::Command(cmd) => match run.engine.apply_command(cmd) {
                    Ok((Reply::Ack(ack), _)) => {
                        prop_assert_eq!(ack.version, before.version + ack.changed as u64);
                        prop_assert_eq!(run.engine.snapshot().version, ack.version);
                        if !ack.changed {
                            prop_assert_eq!(run.engine.snapshot(), before);
                        }
                    }
                    Ok((Reply::State(s), _)) => {
                        let is_get = matches!(cmd, Command::GetState { .. });
                        prop_assert!(is_get);
                        prop_assert_eq!(s, before);
                    }
                    Err(_) => prop_assert_eq!(run.engine.snapshot(), before),
                },
            }
        }
    }
}

#[test]
fn paused_layers_disappear_from_the_rescheduled_batch() {
    let mut run = Run::new();
    run.engine.apply_command(&Command::SetMode { mode: Mode::FullDisplay }).unwrap();
    for b in batches(2) {
        run.feed(&b);
    }
    let paused = [Layer::Kick, Layer::SubBass, Layer::FemaleVoice];
    for l in paused {
        let (_, resched) = run
            .engine
            .apply_command(&Command::PauseLayer { layer: l.id().into() })
            .unwrap();
        let events = &resched.expect("rescheduled").events;
        assert!(events.iter().all(|e| e.layer != l));
    }
    let current = run.engine.current().unwrap();
    let sounding: std::collections::BTreeSet<Layer> = current.events.iter().map(|e| e.layer).collect();
    for l in Layer::ALL {
        assert_eq!(sounding.contains(&l), !paused.contains(&l), "{l}");
    }
    let state = run.engine.snapshot();
    for ls in &state.layers {
        assert_eq!(ls.paused, paused.contains(&ls.id));
    }
}
