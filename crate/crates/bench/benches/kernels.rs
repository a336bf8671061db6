use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use octvf_bench::{fields, tensor};
use octvf_core::augment::{augment_sample, AugmentConfig};
use octvf_core::eval::{bootstrap_ci, pearson_r};
use octvf_core::nn::ops::{conv2d, depthwise_separable_conv, mse_loss, ConvParams};
use octvf_core::nn::{Mode, ModelSpec, Network, Padding};
use octvf_core::synth::{generate_dataset, SynthConfig};
use octvf_core::train::prepare_examples;
use octvf_core::{grid_24_2, Modality};

fn convolutions(c: &mut Criterion) {
    let x = tensor(&[4, 16, 48, 32], 1);
    let w = tensor(&[32, 16, 3, 3], 2);
    c.bench_function("conv2d 16->32 3x3 48x32 b4", |b| {
        b.iter(|| conv2d(&x, &w, None, ConvParams::dense(1, Padding::Same)).unwrap())
    });
    let dw = tensor(&[16, 1, 3, 3], 3);
    let pw = tensor(&[32, 16, 1, 1], 4);
    c.bench_function("separable 16->32 48x32 b4", |b| b.iter(|| depthwise_separable_conv(&x, &dw, &pw).unwrap()));
}

fn network(c: &mut Criterion) {
    let spec = ModelSpec::desk(52, 96, 64);
    let net = Network::<f32>::init(&spec, 0).unwrap();
    let x = tensor(&[4, 1, 64, 96], 5);
    let y = tensor(&[4, 52], 6);
    c.bench_function("desk forward b4", |b| b.iter(|| net.forward(&x, Mode::Infer).unwrap()));
    c.bench_function("desk forward+backward b4", |b| {
        b.iter(|| {
            let trace = net.forward_trace(&x, Mode::Train).unwrap();
            let (_, g) = mse_loss(trace.output(), &y).unwrap();
            net.backward(&trace, &g).unwrap()
        })
    });
}

fn bootstrap(c: &mut Criterion) {
    let (m, p) = fields(120, 7);
    let mut g = c.benchmark_group("bootstrap");
    g.sample_size(10);
    g.bench_function("pearson 1000 resamples 120 exams", |b| {
        b.iter(|| bootstrap_ci(pearson_r, &m, &p, 1000, 0.95, 3).unwrap())
    });
    g.finish();
}

fn augmentation(c: &mut Criterion) {
    let ds = generate_dataset(&SynthConfig { n_patients: 2, exams_per_patient: 1, seed: 8, ..Default::default() }).unwrap();
    let grid = grid_24_2();
    let spec = ModelSpec::desk(52, 96, 64);
    let prepared = prepare_examples(&ds.exams, Modality::Ring3_5, &spec, &grid).unwrap();
    let cfg = AugmentConfig::default();
    let mut seed = 0u64;
    c.bench_function("augment 96x64 sample", |b| {
        b.iter_batched(
            || {
                seed += 1;
                seed
            },
            |s| augment_sample(&prepared.samples[0], &cfg, s, &grid).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, convolutions, network, bootstrap, augmentation);
criterion_main!(benches);
