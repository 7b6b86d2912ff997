use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use textrec_core::data::Ml1m;
use textrec_core::features::{Catalog, EncodedSet, FeatureConfig, FeatureSchema};
use textrec_core::models::{Model, ModelConfig, ModelKind};
use textrec_core::synth::{SynthConfig, SynthCorpus};
use textrec_core::train::predict_all;
use textrec_tensor::{ExecPolicy, ParamStore, Tape};

fn encoded() -> (FeatureSchema, EncodedSet) {
    let corpus = SynthCorpus::generate(&SynthConfig {
        users: 400,
        items: 300,
        ratings_per_user: 40,
        seed: 1,
    });
    let ml = Ml1m {
        users: corpus.users,
        items: corpus.items,
        ratings: corpus.ratings,
    };
    let examples = ml.labeled(4).unwrap();
    let catalog = Catalog::new(&ml.users, &ml.items);
    let schema = FeatureSchema::build(&FeatureConfig::default(), &examples, &catalog).unwrap();
    let set = EncodedSet::encode(&schema, &examples, &catalog, None).unwrap();
    (schema, set)
}

fn bench_predict(c: &mut Criterion) {
    let (schema, set) = encoded();
    let mut group = c.benchmark_group("predict_all");
    group.sample_size(10);
    for kind in [ModelKind::WideDeep, ModelKind::DcnV2] {
        let mut store = ParamStore::new();
        let model = Model::new(&ModelConfig::of(kind), &schema, &mut store, 0).unwrap();
        for policy in [ExecPolicy::Sequential, ExecPolicy::Parallel] {
            let id = BenchmarkId::new(format!("{policy:?}"), kind.display_name());
            group.bench_with_input(id, &policy, |b, &p| {
                b.iter(|| predict_all(&model, &store, black_box(&set), 1024, p).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let (schema, set) = encoded();
    let batch = set.range(0, 4096.min(set.len()));
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    let mut store = ParamStore::new();
    let model = Model::new(&ModelConfig::of(ModelKind::XDeepFm), &schema, &mut store, 0).unwrap();
    for policy in [ExecPolicy::Sequential, ExecPolicy::Parallel] {
        group.bench_function(format!("{policy:?}"), |b| {
            b.iter(|| {
                let tape = Tape::with_policy(policy);
                let loss = model.loss(&tape, &store, &batch).unwrap();
                tape.backward(loss, &mut store).unwrap();
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_predict, bench_train_step);
criterion_main!(benches);
