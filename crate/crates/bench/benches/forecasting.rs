//! End-to-end benchmarks for the hot paths: dense matmul on the tape,
//! the grouped circular convolution layer, learned-adjacency
//! materialization, the full forward pass, and a complete training epoch.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nodecast_bench::{mid_config, synthetic_series};
use nodecast_core::gfc::{gfc_forward, GfcLayerIds, GroupPartition};
use nodecast_core::train::{train, TrainConfig};
use nodecast_core::{prepare_windows, EarlyMetric, Model, ParamStore, SplitSpec, Tape, Tensor};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let len = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, vec![128, 128]);
    let b = rand_tensor(&mut rng, vec![128, 128]);
    c.bench_function("tape_matmul_128", |bencher| {
        bencher.iter(|| {
            let mut tape = Tape::new();
            let va = tape.constant(a.clone());
            let vb = tape.constant(b.clone());
            let prod = tape.matmul(va, vb).unwrap();
            black_box(tape.value(prod).data()[0])
        })
    });
}

fn bench_group_conv(c: &mut Criterion) {
    let (z, n, d) = (8usize, 20usize, 64usize);
    let partition = GroupPartition::new(z, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let ids = GfcLayerIds::register(
        &mut store,
        &mut rng,
        0,
        n,
        10,
        d,
        &partition,
        &[3, 5, 7],
        false,
    )
    .unwrap();
    let h = rand_tensor(&mut rng, vec![z, n, d]);
    let mut a = rand_tensor(&mut rng, vec![n, n]);
    for v in a.data_mut() {
        *v = v.abs() + 0.01;
    }
    c.bench_function("grouped_conv_layer_z8_n20_d64", |bencher| {
        bencher.iter(|| {
            let mut tape = Tape::new();
            let hv = tape.constant(h.clone());
            let av = tape.constant(a.clone());
            let out = gfc_forward(&mut tape, &store, hv, av, &ids, &partition).unwrap();
            black_box(tape.value(out).data()[0])
        })
    });
}

fn bench_adjacency(c: &mut Criterion) {
    let mut cfg = mid_config(207, 24, 12);
    cfg.embed_dim = 32;
    let model = Model::<f64>::init(cfg).unwrap();
    c.bench_function("adjacency_matrix_n207", |bencher| {
        bencher.iter(|| black_box(model.adjacency_matrix(0).unwrap()))
    });
}

fn bench_forward(c: &mut Criterion) {
    let cfg = mid_config(21, 96, 96);
    let model = Model::<f64>::init(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, vec![21, 96]);
    c.bench_function("model_forward_n21_h96_s96", |bencher| {
        bencher.iter(|| black_box(model.forward(&x, 8, 2).unwrap()))
    });
}

fn bench_training_epoch(c: &mut Criterion) {
    let raw = synthetic_series(7, 260, 4);
    let split = SplitSpec::new(180, 40, 40);
    let data = prepare_windows(&raw, &split, true, 48, 12).unwrap();
    let mut cfg = mid_config(7, 48, 12);
    cfg.embed_dim = 32;
    cfg.layers = 1;
    cfg.scalers = 4;
    cfg.groups = 2;
    cfg.kernel_lengths = vec![3];
    let tcfg = TrainConfig {
        epochs: 1,
        batch_size: 32,
        learning_rate: 1e-3,
        shuffle_seed: 0,
        early_metric: EarlyMetric::ValMse,
    };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("epoch_n7_h48_s12_d32", |bencher| {
        bencher.iter(|| black_box(train(cfg.clone(), &tcfg, &data, None).unwrap().steps))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_matmul,
    bench_group_conv,
    bench_adjacency,
    bench_forward,
    bench_training_epoch
);
criterion_main!(benches);
