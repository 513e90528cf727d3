use criterion::{criterion_group, criterion_main, Criterion};

use memlens::capacity::{capacity, verify_lower_bound, DEFAULT_SEARCH_BUDGET};
use memlens::synth::{to_joint_model, EnvKind, EnvSpec};

fn spec(kind: EnvKind, horizon: usize, noise: f64) -> EnvSpec {
    EnvSpec {
        kind,
        horizon,
        alphabet_size: 2,
        noise,
        reward_cue: false,
        seed: 0,
    }
}

fn bench_capacity(c: &mut Criterion) {
    let parity = to_joint_model(&spec(EnvKind::Parity, 4, 0.0)).unwrap();
    let noisy = to_joint_model(&spec(EnvKind::NoisyCopy, 3, 0.25)).unwrap();
    let mut group = c.benchmark_group("capacity");
    group.sample_size(20);
    group.bench_function("parity_h4_search", |b| {
        b.iter(|| capacity(&parity, 8, DEFAULT_SEARCH_BUDGET).unwrap())
    });
    group.bench_function("noisy_copy_h3_bound_report", |b| {
        b.iter(|| verify_lower_bound(&noisy, 8, &[], DEFAULT_SEARCH_BUDGET).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_capacity);
criterion_main!(benches);
