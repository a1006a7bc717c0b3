//! Kernel microbenchmarks: quantized and dense matvec, quantization
//! itself, rotary application, and a full decode step.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use slmkit::archspace::{Activation, ArchConfig};
use slmkit::engine::{init_random_weights, DenseMatrix, Precision, Session};
use slmkit::quantkit::{apply_rope, build_rope_tables, quantize_q4, quantize_rope, RopeKind};

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn bench_matvec(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("matvec");
    for &(rows, cols) in &[(1024usize, 1024usize), (2560, 2560)] {
        let data = random_vec(&mut rng, rows * cols);
        let x = random_vec(&mut rng, cols);
        let q4 = quantize_q4(rows, cols, &data).unwrap();
        let dense = DenseMatrix::new(rows, cols, data).unwrap();
        let mut out = vec![0f32; rows];

        group.bench_function(format!("q4_{rows}x{cols}"), |b| {
            b.iter(|| {
                q4.matvec_into(black_box(&x), &mut out).unwrap();
                black_box(out[0])
            })
        });
        group.bench_function(format!("dense_{rows}x{cols}"), |b| {
            b.iter(|| {
                dense.matvec_into(black_box(&x), &mut out);
                black_box(out[0])
            })
        });
    }
    group.finish();
}

fn bench_quantize(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = random_vec(&mut rng, 1024 * 1024);
    c.bench_function("quantize_q4_1024x1024", |b| {
        b.iter(|| black_box(quantize_q4(1024, 1024, black_box(&data)).unwrap()))
    });
}

fn bench_rope(c: &mut Criterion) {
    let tables = build_rope_tables(2048, 160, 10_000.0).unwrap();
    let q8 = quantize_rope(&tables);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base_q = random_vec(&mut rng, 160);
    let base_k = random_vec(&mut rng, 160);

    let mut group = c.benchmark_group("rope_head160");
    group.bench_function("float", |b| {
        b.iter(|| {
            let mut q = base_q.clone();
            let mut k = base_k.clone();
            apply_rope(&mut q, &mut k, RopeKind::Float(&tables), black_box(1023)).unwrap();
            black_box(q[0])
        })
    });
    group.bench_function("int8", |b| {
        b.iter(|| {
            let mut q = base_q.clone();
            let mut k = base_k.clone();
            apply_rope(&mut q, &mut k, RopeKind::Int8(&q8), black_box(1023)).unwrap();
            black_box(q[0])
        })
    });
    group.finish();
}

fn bench_decode_step(c: &mut Criterion) {
    let config = ArchConfig {
        hidden_size: 448,
        intermediate_size: 1184,
        num_layers: 4,
        q_heads: 16,
        kv_heads: 16,
        activation: Activation::Relu,
        vocab_size: 4096,
        context_len: 256,
        rope_theta: 10_000.0,
    };
    let mut group = c.benchmark_group("decode_step_448w_4l");
    group.sample_size(20);
    for precision in [Precision::Float, Precision::Q4] {
        let model = init_random_weights(&config, 3, precision).unwrap();
        group.bench_function(format!("{precision}"), |b| {
            b.iter_batched(
                || {
                    let mut session = Session::new(&model);
                    session.prefill(&[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
                    session
                },
                |mut session| black_box(session.decode_step(9).unwrap()),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_matvec,
    bench_quantize,
    bench_rope,
    bench_decode_step
);
criterion_main!(benches);
