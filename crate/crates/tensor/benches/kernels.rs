use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use textrec_tensor::{kernels, ExecPolicy, ParamStore, Tape, Tensor};

fn data(len: usize, salt: usize) -> Vec<f32> {
    (0..len).map(|i| (((i * 31 + salt) % 97) as f32 - 48.0) / 50.0).collect()
}

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for &(m, k, n) in &[(512, 160, 256), (4096, 256, 256)] {
        let a = data(m * k, 1);
        let b = data(k * n, 2);
        for policy in [ExecPolicy::Sequential, ExecPolicy::Parallel] {
            let id = BenchmarkId::new(format!("{policy:?}"), format!("{m}x{k}x{n}"));
            group.bench_with_input(id, &policy, |bench, &p| {
                bench.iter(|| kernels::matmul(p, black_box(&a), black_box(&b), m, k, n))
            });
        }
    }
    group.finish();
}

fn bench_mlp_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("mlp_forward_backward");
    group.sample_size(10);
    let (batch, input, hidden) = (1024, 160, 256);
    let mut store = ParamStore::new();
    let w1 = store.add("w1", Tensor::from_vec(vec![input, hidden], data(input * hidden, 3)).unwrap());
    let w2 = store.add("w2", Tensor::from_vec(vec![hidden, 1], data(hidden, 4)).unwrap());
    let x = Tensor::from_vec(vec![batch, input], data(batch * input, 5)).unwrap();
    let labels: Vec<f32> = (0..batch).map(|i| (i % 2) as f32).collect();
    for policy in [ExecPolicy::Sequential, ExecPolicy::Parallel] {
        group.bench_function(format!("{policy:?}"), |bench| {
            bench.iter(|| {
                let tape = Tape::with_policy(policy);
                let xv = tape.constant(x.clone());
                let h = xv.matmul(tape.param(&store, w1)).unwrap().relu().unwrap();
                let logit = h.matmul(tape.param(&store, w2)).unwrap();
                let loss = logit.bce_with_logits(&labels).unwrap();
                let mut s = store.clone();
                tape.backward(loss, &mut s).unwrap();
                black_box(s.len())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_matmul, bench_mlp_step);
criterion_main!(benches);
