use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array3;
use vad_core::exec::{self, ExecMode};
use vad_core::flow::{block_match_flow, BlockMatchParams};
use vad_core::frame_net::{build_frame_net, FrameNetSpec};
use vad_core::scoring::psnr_series;
use vad_core::training::{train_frame, TrainConfig};
use vad_core::data::FrameSample;
use vad_core::Frame;

const MODES: [ExecMode; 2] = [ExecMode::Sequential, ExecMode::Parallel];

fn textured(size: usize, shift: usize) -> Frame {
    Frame::new(Array3::from_shape_fn((size, size, 3), |(y, x, c)| {
        let x = (x + size - shift) % size;
        (((x * 7 + y * 13 + c * 5) ^ (x * y)) % 31) as f64 / 30.0
    }))
    .unwrap()
}

fn block_matching(c: &mut Criterion) {
    let a = textured(64, 0);
    let b = textured(64, 2);
    let mut g = c.benchmark_group("block_match_64");
    for mode in MODES {
        g.bench_function(BenchmarkId::from_parameter(format!("{mode:?}")), |bench| {
            exec::set_mode(mode);
            bench.iter(|| block_match_flow(&a, &b, BlockMatchParams::default()).unwrap())
        });
    }
    g.finish();
}

fn training_epoch(c: &mut Criterion) {
    let spec = FrameNetSpec {
        levels: 2,
        base_channels: 8,
        ..Default::default()
    };
    let init = build_frame_net(&spec, 0).unwrap();
    let samples: Vec<FrameSample> = (0..16)
        .map(|k| FrameSample {
            video_id: "bench".into(),
            index: k,
            current: textured(16, k),
            next: textured(16, k + 1),
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 1,
        use_flow_guidance: false,
        ..Default::default()
    };
    let mut g = c.benchmark_group("frame_batch16_16px");
    g.sample_size(10);
    for mode in MODES {
        g.bench_function(BenchmarkId::from_parameter(format!("{mode:?}")), |bench| {
            exec::set_mode(mode);
            bench.iter(|| train_frame(&cfg, None, init.clone(), &samples, None).unwrap())
        });
    }
    g.finish();
}

fn scoring(c: &mut Criterion) {
    let clips: Vec<Vec<Frame>> = (0..8).map(|v| (0..20).map(|t| textured(64, v + t)).collect()).collect();
    let mut g = c.benchmark_group("psnr_series_8x20");
    for mode in MODES {
        g.bench_function(BenchmarkId::from_parameter(format!("{mode:?}")), |bench| {
            exec::set_mode(mode);
            bench.iter(|| exec::map(&clips, |clip| psnr_series(clip, |f| Ok(f.clone())).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, block_matching, training_epoch, scoring);
criterion_main!(benches);
