use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use bitext_core::gan::GanTrainer;
use bitext_core::rng::seeded;
use bitext_core::{GanConfig, GanModel, Tensor};

fn gan_steps(c: &mut Criterion) {
    let cfg = GanConfig {
        max_len: 10,
        batch_size: 32,
        ..GanConfig::default()
    };
    let model = GanModel::new(cfg, 10, 128, 7).unwrap();
    let mut rng = seeded(8);
    let r0 = Tensor::randn(&[32, 10, 128], 0.5, &mut rng);
    let r1 = Tensor::randn(&[32, 10, 128], 0.5, &mut rng);
    let mut trainer = GanTrainer::new(model, 9);
    c.bench_function("gan_critic_step_b32", |bench| {
        bench.iter(|| black_box(trainer.critic_step(&r0, &r1).unwrap()))
    });
    c.bench_function("gan_generator_step_b32", |bench| {
        bench.iter(|| black_box(trainer.generator_step(32).unwrap()))
    });
}

criterion_group!(benches, gan_steps);
criterion_main!(benches);
