use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use scrapsight_bench::{conv_direct, random_detections, random_image, random_tensor, rng};
use scrapsight_core::darknet::{Activation, BatchNorm, ConvDef, ConvWeights};
use scrapsight_core::imgops;
use scrapsight_core::inference;
use scrapsight_core::postproc::{self, OverlapMetric};
use std::hint::black_box;

fn conv_case(channels: usize, filters: usize, size: usize) -> (ConvDef, ConvWeights) {
    let def = ConvDef {
        filters,
        size,
        stride: 1,
        padding: size / 2,
        batch_normalize: true,
        activation: Activation::Leaky,
    };
    let mut r = rng(size as u64);
    let mut v = |n| random_tensor(&mut r, 1, 1, n).data;
    let weights = ConvWeights {
        biases: v(filters),
        batch_norm: Some(BatchNorm {
            scales: vec![1.0; filters],
            rolling_mean: v(filters),
            rolling_variance: vec![1.0; filters],
        }),
        weights: v(filters * channels * size * size),
    };
    (def, weights)
}

fn convolution(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv 3x3, 52x52");
    for (channels, filters) in [(32, 64), (64, 64), (128, 128)] {
        let input = random_tensor(&mut rng(1), channels, 52, 52);
        let (def, w) = conv_case(channels, filters, 3);
        let id = format!("{channels}->{filters}");
        group.bench_with_input(BenchmarkId::new("im2col", &id), &input, |b, t| {
            b.iter(|| inference::conv_forward(black_box(t), &def, &w).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("direct", &id), &input, |b, t| {
            b.iter(|| conv_direct(black_box(t), &def, &w))
        });
    }
    group.finish();
}

fn pooling(c: &mut Criterion) {
    let input = random_tensor(&mut rng(2), 64, 104, 104);
    c.bench_function("maxpool 2/2 64x104x104", |b| {
        b.iter(|| inference::maxpool_forward(black_box(&input), 2, 2))
    });
}

fn filters(c: &mut Criterion) {
    let img = random_image(&mut rng(3), 416, 416, 3);
    let mut group = c.benchmark_group("filters 416x416 rgb");
    for k in [3, 5] {
        group.bench_with_input(BenchmarkId::new("box_average", k), &k, |b, &k| {
            b.iter(|| imgops::box_average(black_box(&img), k).unwrap())
        });
    }
    group.bench_function("gaussian_blur sigma=1", |b| {
        b.iter(|| imgops::gaussian_blur(black_box(&img), 1.0).unwrap())
    });
    group.finish();
}

fn suppression(c: &mut Criterion) {
    let mut group = c.benchmark_group("nms");
    for n in [100, 1000] {
        let dets = random_detections(&mut rng(n as u64), n, 3);
        for metric in [OverlapMetric::Iou, OverlapMetric::Diou] {
            group.bench_with_input(BenchmarkId::new(metric.to_string(), n), &dets, |b, d| {
                b.iter(|| postproc::nms(black_box(d), 0.45, metric))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, convolution, pooling, filters, suppression);
criterion_main!(benches);
