use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bitext_core::nn::{init_lstm, lstm_step, LstmVars, ParamStore};
use bitext_core::rng::seeded;
use bitext_core::{Graph, Tensor};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_fwd_bwd");
    for n in [32usize, 64, 128] {
        let mut rng = seeded(1);
        let a = Tensor::randn(&[n, n], 1.0, &mut rng);
        let b = Tensor::randn(&[n, n], 1.0, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new();
                let x = g.leaf(a.clone());
                let y = g.leaf(b.clone());
                let z = g.matmul(x, y).unwrap();
                let s = g.sum(z).unwrap();
                black_box(g.backward(s).unwrap());
            })
        });
    }
    group.finish();
}

fn conv1d(c: &mut Criterion) {
    let mut rng = seeded(2);
    let signal = Tensor::randn(&[32, 20, 128], 1.0, &mut rng);
    let kernel = Tensor::randn(&[3, 128, 128], 0.1, &mut rng);
    c.bench_function("conv1d_fwd_bwd_32x20x128", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let x = g.leaf(signal.clone());
            let k = g.leaf(kernel.clone());
            let y = g.conv1d(x, k).unwrap();
            let s = g.sum(y).unwrap();
            black_box(g.backward(s).unwrap());
        })
    });
}

fn lstm(c: &mut Criterion) {
    let mut rng = seeded(3);
    let mut p = ParamStore::new();
    init_lstm(&mut p, "cell", 64, 64, &mut rng);
    let x = Tensor::randn(&[32, 64], 1.0, &mut rng);
    c.bench_function("lstm_10_steps_b32_h64", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let bound = p.bind(&mut g, |_| true);
            let cell = LstmVars::bind(&mut g, &bound, "cell").unwrap();
            let xv = g.constant(x.clone());
            let mut h = g.constant(Tensor::zeros(&[32, 64]));
            let mut c = h;
            for _ in 0..10 {
                (h, c) = lstm_step(&mut g, xv, h, c, &cell).unwrap();
            }
            let s = g.sum(h).unwrap();
            black_box(g.backward(s).unwrap());
        })
    });
}

criterion_group!(benches, matmul, conv1d, lstm);
criterion_main!(benches);
