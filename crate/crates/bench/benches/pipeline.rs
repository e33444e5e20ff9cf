use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wafl_bench::{layer, loss_batch, proposal_set, sequence, synth_config};
use wafl_core::eval::average_precision;
use wafl_core::loss::{LossKind, LossSpec};
use wafl_core::synth::generate;

fn realign(c: &mut Criterion) {
    let mut group = c.benchmark_group("realign");
    let x = sequence(16, 32, 3);

    let eval_layer = layer(0.0);
    group.bench_function("forward_eval_16x32", |b| {
        b.iter(|| eval_layer.forward_eval(black_box(&x)).unwrap())
    });

    let mut train_layer = layer(0.1);
    let upstream = sequence(16, 32, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    group.bench_function("forward_backward_16x32", |b| {
        b.iter(|| {
            let h = train_layer.forward(black_box(&x), &mut rng).unwrap();
            let grads = train_layer.backward(black_box(&upstream)).unwrap();
            (h, grads)
        })
    });
    group.finish();
}

fn losses(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss");
    let batch = loss_batch(64, 11);
    for kind in [LossKind::Aca, LossKind::Focal, LossKind::Bce] {
        let spec = LossSpec::from_kind(kind);
        group.bench_function(format!("batch64_{kind}"), |b| {
            b.iter(|| {
                let mut total = 0.0;
                let mut grad = 0.0;
                for &(p, y) in &batch {
                    total += spec.loss(black_box(p), y).unwrap();
                    grad += spec.grad(black_box(p), y).unwrap();
                }
                (total, grad)
            })
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut group = c.benchmark_group("eval");
    let videos = proposal_set(200, 23);
    group.bench_function("average_precision_200x20", |b| {
        b.iter(|| average_precision(black_box(&videos), 0.5))
    });
    group.finish();
}

fn synthesis(c: &mut Criterion) {
    let mut group = c.benchmark_group("synth");
    group.sample_size(10);
    let cfg = synth_config();
    group.bench_function("generate_50_videos", |b| b.iter(|| generate(black_box(&cfg)).unwrap()));
    group.finish();
}

criterion_group!(benches, realign, losses, metrics, synthesis);
criterion_main!(benches);
