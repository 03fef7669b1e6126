use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;

use clustertone_core::audio::{
    default_sources, AudioConfig, BatchTimeline, BusBuffers, LivePlayer, Mixer, PlayerQueues, SampleBuffer, Voice,
    VoiceSource,
};
use clustertone_core::clustersim::{Activity, SimConfig, Simulator};
use clustertone_core::control::{Command, Mode};
use clustertone_core::layer::{Layer, PerLayer};
use clustertone_core::mapping::FxSends;
use clustertone_core::protocol::Ingestor;
use clustertone_core::sequencer::{LayerEvent, Transport};
use clustertone_core::{BatchRenderer, Config, Engine, ScheduledBatch};

struct CountingAlloc;

thread_local! {
    static ALLOCS: Cell<u64> = const { Cell::new(0) };
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let _ = ALLOCS.try_with(|c| c.set(c.get() + 1));
        unsafe { System.alloc(layout) }
    }
    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) }
    }
    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let _ = ALLOCS.try_with(|c| c.set(c.get() + 1));
        unsafe { System.realloc(ptr, layout, new_size) }
    }
}

#[global_allocator]
static GLOBAL: CountingAlloc = CountingAlloc;

fn allocations_during(f: impl FnOnce()) -> u64 {
    let before = ALLOCS.with(Cell::get);
    f();
    ALLOCS.with(Cell::get) - before
}

fn no_overrides() -> PerLayer<Option<SampleBuffer>> {
    PerLayer(std::array::from_fn(|_| None))
}

fn event(layer: Layer, gain: f64, fx: FxSends, idle_echo: bool) -> LayerEvent {
    LayerEvent {
        layer,
        onset: 0.0,
        step: 0,
        rate: 1.0,
        gain,
        fx,
        idle_echo,
    }
}

fn impulse_mixer(cfg: AudioConfig) -> Mixer {
    let mut sources = default_sources(cfg.sample_rate, &no_overrides());
    sources[Layer::Kick] = VoiceSource::Sample(SampleBuffer::new(vec![1.0], cfg.sample_rate));
    Mixer::new(cfg, &Transport::default(), sources)
}

fn render(mixer: &mut Mixer, frames: usize) -> Vec<f32> {
    let mut out = vec![0.0; frames];
    mixer.render_block(&mut out);
    out
}

#[test]
fn delay_bus_impulse_response() {
    let cfg = AudioConfig {
        master_gain: 1.0,
        delay_wet: 1.0,
        reverb_wet: 0.0,
        ..AudioConfig::default()
    };
    let mut mixer = impulse_mixer(cfg);
    let d = mixer.delay_samples();
    // Three sixteenth notes at 128 BPM.
    assert_eq!(d, 16875);
    let send = 0.5;
    mixer.trigger(&event(Layer::Kick, 1.0, FxSends { reverb: 0.0, delay: send }, false));
    let out = render(&mut mixer, 6 * d + 1);
    let fb = cfg.delay_feedback as f64;
    for (n, &y) in out.iter().enumerate() {
        let expected = if n == 0 {
            1.0
        } else if n % d == 0 {
            send * fb.powi((n / d) as i32 - 1)
        } else {
            0.0
        };
        assert!((y as f64 - expected).abs() < 1e-6, "n = {n}: {y} vs {expected}");
    }
}

#[test]
fn idle_echo_decays_geometrically() {
    let cfg = AudioConfig {
        master_gain: 1.0,
        ..AudioConfig::default()
    };
    let mut mixer = impulse_mixer(cfg);
    let d = mixer.echo_samples();
    assert_eq!(d, 16875);
    mixer.trigger(&event(Layer::Kick, 1.0, FxSends::default(), true));
    let out = render(&mut mixer, 8 * d + 1);
    for k in 1..=8 {
        let expected = cfg.echo_wet as f64 * 0.6f64.powi(k - 1);
        assert!((out[k as usize * d] as f64 - expected).abs() < 1e-6, "repeat {k}");
    }
    let energy_elsewhere: f32 = out
        .iter()
        .enumerate()
        .filter(|(n, _)| n % d != 0)
        .map(|(_, y)| y * y)
        .sum();
    assert_eq!(energy_elsewhere, 0.0);
}

#[test]
fn zero_sends_bypass_every_bus() {
    let cfg = AudioConfig::default();
    let sources = default_sources(cfg.sample_rate, &no_overrides());
    for layer in Layer::ALL {
        let mut mixer = Mixer::new(cfg, &Transport::default(), sources.clone());
        let mut voice = Voice::new(layer, sources[layer].clone(), cfg.polyphony, cfg.sample_rate);
        let frames = 48_000;
        let second_hit = 10_007;

        let hit = LayerEvent {
            rate: 1.25,
            ..event(layer, 0.8, FxSends::default(), false)
        };
        let mut due = vec![(0u64, hit), (second_hit as u64, hit)].into_iter().peekable();
        let mut out = vec![0.0; frames];
        mixer.render_block_with(&mut out, |end| due.next_if(|(at, _)| *at < end));

        let mut dry = vec![0.0f32; frames];
        let mut scratch = vec![vec![0.0f32; frames]; 3];
        let [r, d, e] = &mut scratch[..] else { unreachable!() };
        voice.trigger(&hit, 1.0);
        for (from, to) in [(0, second_hit), (second_hit, frames)] {
            if from == second_hit {
                voice.trigger(&hit, 1.0);
            }
            voice.render(&mut BusBuffers {
                dry: &mut dry[from..to],
                reverb: &mut r[from..to],
                delay: &mut d[from..to],
                echo: &mut e[from..to],
            });
        }
        let expected: Vec<f32> = dry.iter().map(|x| (x * cfg.master_gain).clamp(-1.0, 1.0)).collect();
        assert!(out == expected, "{layer} differs from its dry rendering");
        assert!(out.iter().any(|&y| y != 0.0), "{layer} rendered silence");
    }
}

#[test]
fn double_rate_reads_every_other_sample() {
    let cfg = AudioConfig {
        master_gain: 1.0,
        ..AudioConfig::default()
    };
    let data: Vec<f32> = (0..1000).map(|i| ((i as f32) * 0.01).sin() * 0.5).collect();
    let mut sources = default_sources(cfg.sample_rate, &no_overrides());
    sources[Layer::Snare] = VoiceSource::Sample(SampleBuffer::new(data.clone(), cfg.sample_rate));
    let mut mixer = Mixer::new(cfg, &Transport::default(), sources);
    mixer.trigger(&LayerEvent {
        rate: 2.0,
        ..event(Layer::Snare, 1.0, FxSends::default(), false)
    });
    let out = render(&mut mixer, 1000);
    for i in 0..500 {
        assert_eq!(out[i], data[2 * i]);
    }
    assert!(out[500..].iter().all(|&y| y == 0.0));
}

#[test]
fn fractional_rate_interpolates_linearly() {
    let cfg = AudioConfig {
        master_gain: 1.0,
        ..AudioConfig::default()
    };
    let data: Vec<f32> = (0..64).map(|i| (i * i) as f32 / 4096.0).collect();
    let mut sources = default_sources(cfg.sample_rate, &no_overrides());
    sources[Layer::Clap] = VoiceSource::Sample(SampleBuffer::new(data.clone(), cfg.sample_rate));
    let mut mixer = Mixer::new(cfg, &Transport::default(), sources);
    mixer.trigger(&LayerEvent {
        rate: 1.5,
        ..event(Layer::Clap, 1.0, FxSends::default(), false)
    });
    let out = render(&mut mixer, 64);
    for (i, &y) in out.iter().enumerate().take(42) {
        let pos = i as f64 * 1.5;
        let k = pos.floor() as usize;
        let next = data.get(k + 1).copied().unwrap_or(0.0) as f64;
        let expected = data[k] as f64 + (next - data[k] as f64) * (pos - k as f64);
        assert!((y as f64 - expected).abs() < 1e-6, "i = {i}");
    }
}

#[test]
fn limiter_clamps_and_counts() {
    let cfg = AudioConfig {
        master_gain: 50.0,
        ..AudioConfig::default()
    };
    let mut mixer = Mixer::with_default_voices(cfg, &Transport::default());
    for layer in Layer::ALL {
        mixer.trigger(&event(layer, 1.0, FxSends { reverb: 1.0, delay: 1.0 }, false));
    }
    let out = render(&mut mixer, 48_000);
    assert!(out.iter().all(|y| y.abs() <= 1.0));
    let hits = mixer.stats().limiter_hits;
    assert!(hits > 0);
    assert_eq!(hits, out.iter().filter(|y| y.abs() == 1.0).count() as u64);
}

fn scheduled(cfg: &Config, batches: usize, activity: Option<Activity>, tutti: bool) -> Vec<ScheduledBatch> {
    let mut sim = Simulator::new(SimConfig {
        seed: 11,
        table: cfg.table().unwrap(),
        ..SimConfig::default()
    })
    .unwrap();
    if let Some(a) = activity {
        sim.force_all(a);
    }
    let mut engine = Engine::new(cfg.engine_config());
    if tutti {
        engine.apply_command(&Command::SetMode { mode: Mode::FullDisplay }).unwrap();
    }
    let mut ingestor = Ingestor::new(cfg.table().unwrap());
    (0..batches)
        .map(|_| {
            let b = ingestor.accept(&sim.step()).unwrap();
            engine.process(&b).clone()
        })
        .collect()
}

#[test]
fn callback_paths_do_not_allocate() {
    let cfg = Config::default();
    let sr = cfg.audio.sample_rate;
    let transport = cfg.transport();
    let batches = scheduled(&cfg, 3, Some(Activity::Busy), true);
    let queues = PlayerQueues::new();
    let mixer = Mixer::new(cfg.audio, &transport, default_sources(sr, &no_overrides()));
    let mut player = LivePlayer::new(mixer, &transport, queues.clone());
    let mut block = vec![0.0f32; cfg.audio.block_size];

    let timelines: Vec<BatchTimeline> = batches.iter().map(|b| BatchTimeline::new(b, sr)).collect();
    queues.send(timelines[0].clone());
    let frames_per_batch = 720_000 / block.len() + 1;
    let mut total = 0;
    for (i, next) in timelines.iter().enumerate().skip(1) {
        total += allocations_during(|| {
            for _ in 0..frames_per_batch {
                player.process(&mut block);
            }
        });
        queues.send(next.clone());
        if i == 1 {
            // Same index again: a reschedule.
            queues.send(next.clone());
        }
    }
    // Let the last batch loop once.
    total += allocations_during(|| {
        for _ in 0..2 * frames_per_batch {
            player.process(&mut block);
        }
    });
    let stats = player.stats();
    assert!(stats.swaps >= 3 && stats.loops >= 1, "{stats:?}");
    assert_eq!(total, 0, "audio callback allocated");

    let mut mixer = Mixer::with_default_voices(cfg.audio, &transport);
    for layer in Layer::ALL {
        mixer.trigger(&event(layer, 1.0, FxSends { reverb: 0.5, delay: 0.5 }, false));
    }
    let n = allocations_during(|| {
        for _ in 0..1000 {
            mixer.render_block(&mut block);
        }
    });
    assert_eq!(n, 0);
}

#[test]
fn live_player_matches_offline_renderer() {
    let cfg = Config::default();
    let sr = cfg.audio.sample_rate;
    let transport = cfg.transport();
    let batches = scheduled(&cfg, 3, None, false);

    let mut offline = BatchRenderer::new(&cfg, &no_overrides());
    let mut expected = Vec::new();
    for b in &batches {
        expected.extend_from_slice(offline.render(b));
    }

    let queues = PlayerQueues::new();
    let mixer = Mixer::new(cfg.audio, &transport, default_sources(sr, &no_overrides()));
    let mut player = LivePlayer::new(mixer, &transport, queues.clone());
    let mut live = Vec::with_capacity(expected.len());
    let mut block = vec![0.0f32; cfg.audio.block_size];
    let batch_len = 720_000usize;
    for (i, b) in batches.iter().enumerate() {
        queues.send(BatchTimeline::new(b, sr));
        // Deliver the next batch during the last pattern cycle of this one.
        let until = if i + 1 == batches.len() { batch_len * (i + 1) } else { batch_len * i + 600_000 };
        while live.len() < until {
            let n = (until - live.len()).min(block.len());
            player.process(&mut block[..n]);
            live.extend_from_slice(&block[..n]);
        }
    }
    assert_eq!(live.len(), expected.len());
    assert!(live == expected, "audio differs");
    assert_eq!(player.stats().swaps, 3);
    assert_eq!(player.stats().loops, 0);
    assert_eq!(player.mixer().stats().triggers, offline.mixer().stats().triggers);
}

#[test]
fn renders_are_repeatable() {
    let cfg = Config::default();
    let batches = scheduled(&cfg, 2, None, true);
    let run = || {
        let mut r = BatchRenderer::new(&cfg, &no_overrides());
        batches.iter().flat_map(|b| r.render(b).to_vec()).collect::<Vec<f32>>()
    };
    let a = run();
    let b = run();
    assert_eq!(a.len(), 2 * 720_000);
    assert!(a == b);
}
