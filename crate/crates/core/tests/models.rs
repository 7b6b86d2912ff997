use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textrec_core::data::{LabeledExample, Ml1m};
use textrec_core::embed::stub_vector;
use textrec_core::features::{
    project_text_embedding, text_keys, Catalog, EncodedSet, FeatureConfig, FeatureError, FeatureSchema, TextTable,
};
use textrec_core::models::{
    cin_forward, euler_units, Cin, Linear, Model, ModelConfig, ModelError, ModelKind, EULER_EPS,
};
use textrec_core::synth::{SynthConfig, SynthCorpus};
use textrec_tensor::gradcheck;
use textrec_tensor::{ExecPolicy, ParamStore, Tape, Tensor, TensorError};

struct Tiny {
    catalog: Catalog,
    examples: Vec<LabeledExample>,
}

fn tiny(n: usize) -> Tiny {
    let corpus = SynthCorpus::generate(&SynthConfig {
        users: 6,
        items: 5,
        ratings_per_user: 4,
        seed: 11,
    });
    let ml = Ml1m {
        users: corpus.users,
        items: corpus.items,
        ratings: corpus.ratings,
    };
    let mut examples = ml.labeled(4).unwrap();
    examples.truncate(n);
    Tiny {
        catalog: Catalog::new(&ml.users, &ml.items),
        examples,
    }
}

fn text_table(t: &Tiny, dim: usize) -> Arc<TextTable> {
    let mut table = TextTable::new(dim);
    for ex in &t.examples {
        for key in text_keys(ex) {
            let v = stub_vector(&key, dim);
            table.insert(key, &v, false).unwrap();
        }
    }
    Arc::new(table)
}

fn small_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        mlp: vec![5, 3],
        cin: vec![2, 3],
        cross_layers: 2,
        euler_orders: 3,
    }
}

/// Schema, encoded set and a model with every parameter drawn away from zero.
fn tiny_model(kind: ModelKind, fields: &[&str], d: usize, text: Option<usize>, n: usize, seed: u64) -> (Model, ParamStore, EncodedSet) {
    let t = tiny(n);
    let cfg = FeatureConfig {
        fields: fields.iter().map(|s| s.to_string()).collect(),
        embed_dim: d,
        text_dim: d,
        ..FeatureConfig::default()
    };
    let mut schema = FeatureSchema::build(&cfg, &t.examples, &t.catalog).unwrap();
    let table = text.map(|dim| {
        schema = schema.clone().enriched(dim, d);
        text_table(&t, dim)
    });
    let set = EncodedSet::encode(&schema, &t.examples, &t.catalog, table).unwrap();
    let mut store = ParamStore::new();
    let model = Model::new(&small_config(kind), &schema, &mut store, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let shape = store.get(id).value().shape().to_vec();
        let len: usize = shape.iter().product();
        // Magnitudes in [0.2, 0.7] keep abs/relu kinks and EulerNet's sign phase away from the step h.
        let data = (0..len)
            .map(|_| {
                let m: f32 = rng.random_range(0.2..0.7);
                if rng.random_bool(0.5) { m } else { -m }
            })
            .collect();
        store.set_value(id, Tensor::from_vec(shape, data).unwrap()).unwrap();
    }
    (model, store, set)
}

fn tensor_err(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => panic!("unexpected model error: {other}"),
    }
}

const THREE_FIELDS: [&str; 3] = ["gender", "item_id", "hour"];

#[test]
fn every_model_passes_gradient_check() {
    for kind in ModelKind::ALL {
        for text in [None, Some(3)] {
            for seed in 0..2 {
                let (model, mut store, set) = tiny_model(kind, &THREE_FIELDS, 4, text, 2, seed);
                let batch = set.range(0, 2);
                let report = gradcheck::check(&mut store, 1e-3, |tape, s| model.loss(tape, s, &batch).map_err(tensor_err)).unwrap();
                assert!(
                    report.max_rel_err < 1e-3,
                    "{kind:?} text={text:?} seed={seed}: {:?}",
                    report.worst
                );
            }
        }
    }
}

// ---- CIN against a brute-force oracle -------------------------------------

/// Materializes every pairwise Hadamard product of a single example.
fn cin_oracle(x0: &[Vec<f64>], layers: &[Vec<Vec<f64>>], head_w: &[f64], head_b: f64) -> f64 {
    let f = x0.len();
    let d = x0[0].len();
    let mut x = x0.to_vec();
    let mut pooled = Vec::new();
    for w in layers {
        let mut z = vec![vec![0.0; d]; x.len() * f];
        for i in 0..x.len() {
            for j in 0..f {
                for t in 0..d {
                    z[i * f + j][t] = x[i][t] * x0[j][t];
                }
            }
        }
        let next: Vec<Vec<f64>> = w
            .iter()
            .map(|row| (0..d).map(|t| row.iter().zip(&z).map(|(wij, zij)| wij * zij[t]).sum()).collect())
            .collect();
        pooled.extend(next.iter().map(|m| m.iter().sum::<f64>()));
        x = next;
    }
    pooled.iter().zip(head_w).map(|(p, w)| p * w).sum::<f64>() + head_b
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn cin_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for draw in 0..50 {
        let f = rng.random_range(1..=4);
        let d = rng.random_range(1..=4);
        let n_layers = rng.random_range(1..=2);
        let sizes: Vec<usize> = (0..n_layers).map(|_| rng.random_range(1..=3)).collect();
        let batch = 2;
        let mut store = ParamStore::new();
        let mut prev = f;
        let mut layer_vals = Vec::new();
        let mut layers = Vec::new();
        for (k, &h) in sizes.iter().enumerate() {
            let w = rand_vec(&mut rng, h * prev * f);
            layer_vals.push(
                w.chunks(prev * f)
                    .map(|r| r.iter().map(|&v| v as f64).collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
            );
            layers.push(store.add(format!("cin.{k}"), Tensor::from_vec(vec![h, prev * f], w).unwrap()));
            prev = h;
        }
        let total: usize = sizes.iter().sum();
        let hw = rand_vec(&mut rng, total);
        let hb = rng.random_range(-1.0f32..1.0);
        let cin = Cin {
            layers,
            head: Linear {
                w: store.add("head.w", Tensor::from_vec(vec![total, 1], hw.clone()).unwrap()),
                b: store.add("head.b", Tensor::from_vec(vec![1], vec![hb]).unwrap()),
            },
        };
        let x = rand_vec(&mut rng, batch * f * d);
        let tape = Tape::new();
        let out = cin_forward(
            &tape,
            &store,
            &cin,
            tape.constant(Tensor::from_vec(vec![batch, f, d], x.clone()).unwrap()),
        )
        .unwrap()
        .to_vec();
        let hw64: Vec<f64> = hw.iter().map(|&v| v as f64).collect();
        for b in 0..batch {
            let x0: Vec<Vec<f64>> = (0..f)
                .map(|i| (0..d).map(|t| x[(b * f + i) * d + t] as f64).collect())
                .collect();
            let want = cin_oracle(&x0, &layer_vals, &hw64, hb as f64);
            assert!(
                (out[b] as f64 - want).abs() < 1e-5,
                "draw {draw}: got {} want {want}",
                out[b]
            );
        }
    }
}

#[test]
fn cin_hand_example_and_zero_weights() {
    let mut store = ParamStore::new();
    let cin = Cin {
        layers: vec![store.add("cin.0", Tensor::full(&[1, 4], 1.0))],
        head: Linear {
            w: store.add("w", Tensor::full(&[1, 1], 1.0)),
            b: store.add("b", Tensor::zeros(&[1])),
        },
    };
    let (x1, x2) = ([0.5f32, -2.0], [3.0f32, 0.25]);
    let tape = Tape::new();
    let x0 = tape.constant(Tensor::from_vec(vec![1, 2, 2], vec![x1[0], x1[1], x2[0], x2[1]]).unwrap());
    let got = cin_forward(&tape, &store, &cin, x0).unwrap().to_vec()[0];
    let want: f32 = (0..2).map(|t| (x1[t] + x2[t]) * (x1[t] + x2[t])).sum();
    assert!((got - want).abs() < 1e-6);

    store.set_value(cin.layers[0], Tensor::zeros(&[1, 4])).unwrap();
    store.set_value(cin.head.b, Tensor::scalar(0.375).reshape(&[1]).unwrap()).unwrap();
    let tape = Tape::new();
    let x0 = tape.constant(Tensor::from_vec(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    assert_eq!(cin_forward(&tape, &store, &cin, x0).unwrap().to_vec(), vec![0.375]);
}

// ---- EulerNet ---------------------------------------------------------------

#[test]
fn euler_one_hot_exponent_passes_fields_through() {
    let tape = Tape::new();
    let e = [0.8f32, -0.3, 0.05, 1.7, -2.0, 0.4];
    let ev = tape.constant(Tensor::from_vec(vec![1, 2, 3], e.to_vec()).unwrap());
    for j in 0..2 {
        let mut a = vec![0.0f32; 2];
        a[j] = 1.0;
        let alpha = tape.constant(Tensor::from_vec(vec![1, 2], a).unwrap());
        let (re, im) = euler_units(&tape, alpha, ev).unwrap();
        for t in 0..3 {
            let x = e[j * 3 + t];
            let r = x.abs() + EULER_EPS;
            let re_t = re.to_vec()[t];
            assert!((re_t - if x >= 0.0 { r } else { -r }).abs() < 1e-6);
            if x >= 0.0 {
                assert_eq!(im.to_vec()[t], 0.0);
            } else {
                assert!(im.to_vec()[t].abs() < 1e-6);
            }
        }
    }
}

#[test]
fn euler_moduli_are_products_of_powers() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (f, o, d) = (3, 4, 2);
    let e = rand_vec(&mut rng, f * d);
    let a = rand_vec(&mut rng, o * f);
    let tape = Tape::new();
    let (re, im) = euler_units(
        &tape,
        tape.constant(Tensor::from_vec(vec![o, f], a.clone()).unwrap()),
        tape.constant(Tensor::from_vec(vec![1, f, d], e.clone()).unwrap()),
    )
    .unwrap();
    let (re, im) = (re.to_vec(), im.to_vec());
    for u in 0..o {
        for t in 0..d {
            let want: f64 = (0..f)
                .map(|j| ((e[j * d + t].abs() + EULER_EPS) as f64).powf(a[u * f + j] as f64))
                .product();
            let k = u * d + t;
            let m = ((re[k] as f64).powi(2) + (im[k] as f64).powi(2)).sqrt();
            assert!(m > 0.0);
            assert!((m - want).abs() <= 1e-6 * want.max(1.0), "unit {u}: {m} vs {want}");
        }
    }
}

// ---- WideDeep ---------------------------------------------------------------

fn two_field_widedeep() -> (Model, ParamStore, EncodedSet, FeatureSchema) {
    let t = tiny(3);
    let cfg = FeatureConfig {
        fields: vec!["gender".into(), "hour".into()],
        embed_dim: 1,
        ..FeatureConfig::default()
    };
    let schema = FeatureSchema::build(&cfg, &t.examples, &t.catalog).unwrap();
    let set = EncodedSet::encode(&schema, &t.examples, &t.catalog, None).unwrap();
    let mut store = ParamStore::new();
    let config = ModelConfig {
        mlp: vec![],
        ..ModelConfig::of(ModelKind::WideDeep)
    };
    let model = Model::new(&config, &schema, &mut store, 0).unwrap();
    (model, store, set, schema)
}

#[test]
fn widedeep_zero_weights_give_one_half() {
    let (model, mut store, set, _) = two_field_widedeep();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let shape = store.get(id).value().shape().to_vec();
        store.set_value(id, Tensor::zeros(&shape)).unwrap();
    }
    let p = model.predict_batch(&store, &set.range(0, 3), ExecPolicy::Sequential).unwrap();
    assert_eq!(p, vec![0.5; 3]);
}

#[test]
fn widedeep_by_hand() {
    let (model, mut store, set, schema) = two_field_widedeep();
    let t = tiny(3);
    let ex = &t.examples[0];
    let user = &t.catalog.users[&ex.user_id];
    let g = schema.vocabs[0].encode(user.gender.code()) as usize;
    let h = schema.vocabs[1].encode(&ex.context.hour_of_day.to_string()) as usize;
    let set_row = |store: &mut ParamStore, name: &str, row: usize, v: f32| {
        let id = store.id_of(name).unwrap();
        let mut t = store.get(id).value().clone();
        t.data_mut()[row] = v;
        store.set_value(id, t).unwrap();
    };
    set_row(&mut store, "emb.gender", g, 0.5);
    set_row(&mut store, "emb.hour", h, -1.0);
    set_row(&mut store, "wide.gender", g, 0.25);
    set_row(&mut store, "wide.hour", h, 0.125);
    let id = store.id_of("wide.bias").unwrap();
    store.set_value(id, Tensor::from_vec(vec![1], vec![-0.5]).unwrap()).unwrap();
    let id = store.id_of("mlp.out.w").unwrap();
    store.set_value(id, Tensor::from_vec(vec![2, 1], vec![2.0, 3.0]).unwrap()).unwrap();
    let id = store.id_of("mlp.out.b").unwrap();
    store.set_value(id, Tensor::from_vec(vec![1], vec![0.1]).unwrap()).unwrap();

    let wide = 0.25 + 0.125 - 0.5;
    let deep = 2.0 * 0.5 + 3.0 * -1.0 + 0.1;
    let want = 1.0 / (1.0 + (-(wide + deep) as f64).exp());
    let got = model.predict_batch(&store, &set.range(0, 1), ExecPolicy::Sequential).unwrap()[0];
    assert!((got as f64 - want).abs() < 1e-6, "{got} vs {want}");
}

// ---- predict_batch ------------------------------------------------------------

#[test]
fn batching_does_not_change_predictions() {
    for kind in ModelKind::ALL {
        let (model, store, set) = tiny_model(kind, &THREE_FIELDS, 4, Some(3), 6, 1);
        let empty = set.batch(&[]);
        assert!(model.predict_batch(&store, &empty, ExecPolicy::Sequential).unwrap().is_empty());
        let all = model.predict_batch(&store, &set.range(0, 6), ExecPolicy::Sequential).unwrap();
        for i in 0..6 {
            let one = model.predict_batch(&store, &set.range(i, i + 1), ExecPolicy::Sequential).unwrap();
            assert!((one[0] - all[i]).abs() <= 1e-7, "{kind:?} row {i}");
        }
        let dup = model.predict_batch(&store, &set.batch(&[2, 4, 2]), ExecPolicy::Parallel).unwrap();
        assert_eq!(dup[0], dup[2]);
    }
}

#[test]
fn raw_models_never_touch_text_projections() {
    let (model, store, _) = tiny_model(ModelKind::WideDeep, &THREE_FIELDS, 4, None, 4, 0);
    assert!(store.iter().all(|(_, p)| !p.name().starts_with("proj.")));
    // A batch laid out for the enriched schema is refused.
    let (_, _, enriched_set) = tiny_model(ModelKind::WideDeep, &THREE_FIELDS, 4, Some(3), 4, 0);
    let err = model
        .predict_batch(&store, &enriched_set.range(0, 2), ExecPolicy::Sequential)
        .unwrap_err();
    assert!(matches!(err, ModelError::Feature(FeatureError::FieldOrderMismatch { .. })), "{err}");
}

#[test]
fn enrichment_widens_input_by_three_text_blocks() {
    for kind in ModelKind::ALL {
        let (raw, _, _) = tiny_model(kind, &THREE_FIELDS, 4, None, 4, 0);
        let (enr, _, _) = tiny_model(kind, &THREE_FIELDS, 4, Some(3), 4, 0);
        assert_eq!(enr.input_dim() - raw.input_dim(), 3 * 4);
    }
}

#[test]
fn cin_and_euler_need_uniform_blocks() {
    let t = tiny(4);
    let cfg = FeatureConfig {
        fields: THREE_FIELDS.iter().map(|s| s.to_string()).collect(),
        embed_dim: 4,
        ..FeatureConfig::default()
    };
    let schema = FeatureSchema::build(&cfg, &t.examples, &t.catalog).unwrap().enriched(3, 2);
    for kind in [ModelKind::XDeepFm, ModelKind::EulerNet] {
        let mut store = ParamStore::new();
        assert!(matches!(
            Model::new(&small_config(kind), &schema, &mut store, 0),
            Err(ModelError::Config(_))
        ));
    }
    for kind in [ModelKind::WideDeep, ModelKind::DcnV2] {
        let mut store = ParamStore::new();
        assert!(Model::new(&small_config(kind), &schema, &mut store, 0).is_ok());
    }
}

// ---- text projection ----------------------------------------------------------

#[test]
fn projection_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let v = rand_vec(&mut rng, 2 * 5);
    let tape = Tape::new();
    let vecs = tape.constant(Tensor::from_vec(vec![2, 5], v.clone()).unwrap());

    let zero = project_text_embedding(vecs, tape.constant(Tensor::zeros(&[5, 3]))).unwrap();
    assert!(zero.to_vec().iter().all(|&x| x == 0.0));

    let ident = project_text_embedding(vecs, tape.constant(Tensor::eye(5))).unwrap();
    assert_eq!(ident.to_vec(), v);

    let w = rand_vec(&mut rng, 5 * 3);
    let out = project_text_embedding(vecs, tape.constant(Tensor::from_vec(vec![5, 3], w.clone()).unwrap()))
        .unwrap()
        .to_vec();
    for b in 0..2 {
        for j in 0..3 {
            let want: f64 = (0..5).map(|k| v[b * 5 + k] as f64 * w[k * 3 + j] as f64).sum();
            assert!((out[b * 3 + j] as f64 - want).abs() < 1e-6);
        }
    }

    assert!(matches!(
        project_text_embedding(vecs, tape.constant(Tensor::zeros(&[4, 3]))),
        Err(FeatureError::DimMismatch { expected: 4, got: 5 })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_stay_in_open_unit_interval(seed in 0u64..1000, kind in 0usize..4) {
        let t = tiny(8);
        let cfg = FeatureConfig {
            fields: THREE_FIELDS.iter().map(|s| s.to_string()).collect(),
            embed_dim: 4,
            ..FeatureConfig::default()
        };
        let schema = FeatureSchema::build(&cfg, &t.examples, &t.catalog).unwrap();
        let set = EncodedSet::encode(&schema, &t.examples, &t.catalog, None).unwrap();
        let mut store = ParamStore::new();
        let model = Model::new(&small_config(ModelKind::ALL[kind]), &schema, &mut store, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = model.features.tables.clone();
        for id in tables {
            let shape = store.get(id).value().shape().to_vec();
            let n = shape.iter().product();
            store.set_value(id, Tensor::from_vec(shape, rand_vec(&mut rng, n)).unwrap()).unwrap();
        }
        let p = model.predict_batch(&store, &set.range(0, set.len()), ExecPolicy::Sequential).unwrap();
        prop_assert!(p.iter().all(|&x| x > 0.0 && x < 1.0), "{:?}", p);
    }
}
