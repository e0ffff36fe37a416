use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use image::RgbImage;
use moana::config::TrackerConfig;
use moana::ingest::FrameDetections;
use moana::parallel::Execution;
use moana::pipeline::{run_sequence, PipelineError, Tracker};
use moana::synth::{Agent, Scenario};

/// A crowded variant of the crossing scene: eight agents on parallel lanes.
fn crowd() -> Scenario {
    let mut s = Scenario::two_cross();
    s.name = "crowd".into();
    s.frames = 40;
    s.agents = (0..8u64)
        .map(|i| {
            let y = 6.0 + 0.8 * i as f64;
            let dir = if i % 2 == 0 { 1.0 } else { -1.0 };
            Agent {
                id: i + 1,
                top: [(40 + 25 * i) as u8, (200 - 20 * i) as u8, (90 + 15 * i) as u8],
                bottom: [(20 + 10 * i) as u8, 40, (160 - 15 * i) as u8],
                width: 0.5,
                height: 1.8,
                path: vec![(1, [-3.0 * dir, y]), (40, [3.0 * dir, y])],
            }
        })
        .collect();
    s
}

fn run(scene: &Scenario, frames: &[RgbImage], dets: &FrameDetections, mode: Execution) -> usize {
    let config = TrackerConfig { fps: scene.fps, ..Default::default() };
    let tracker = Tracker::new(config, scene.camera()).unwrap().with_execution(mode);
    run_sequence(tracker, scene.frames, dets, |f| Ok::<_, PipelineError>(frames[f as usize - 1].clone()))
        .unwrap()
        .len()
}

fn bench_modes(c: &mut Criterion) {
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    for scene in [Scenario::two_cross(), crowd()] {
        let frames: Vec<RgbImage> = (1..=scene.frames).map(|f| scene.render(f)).collect();
        let dets = scene.detections(1, scene.det_noise, scene.dropout);
        for (label, mode) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(label, &scene.name), &mode, |b, &mode| {
                b.iter(|| black_box(run(&scene, &frames, &dets, mode)))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_modes);
criterion_main!(benches);
