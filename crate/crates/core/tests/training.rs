use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textrec_core::data::{ContextFields, Gender, LabeledExample, RawItem, RawUser, Weekday};
use textrec_core::features::{Catalog, EncodedSet, FeatureConfig, FeatureSchema};
use textrec_core::metrics::MetricError;
use textrec_core::models::{Model, ModelConfig, ModelKind};
use textrec_core::train::{evaluate, predict_all, rank_top_n, train, RankingContext, TrainConfig, TrainError};
use textrec_tensor::{ExecPolicy, ParamStore};

struct Toy {
    catalog: Catalog,
    schema: FeatureSchema,
    train: EncodedSet,
    valid: EncodedSet,
}

/// Two fields, label = (gender is F) XOR (item id is even), with 5% label noise.
fn toy(n: usize, seed: u64) -> Toy {
    let users: Vec<RawUser> = (1..=20)
        .map(|u| RawUser {
            user_id: u,
            gender: if u % 2 == 0 { Gender::F } else { Gender::M },
            age_code: 25,
            occupation_code: 0,
            zip: "12345".into(),
        })
        .collect();
    let items: Vec<RawItem> = (1..=40)
        .map(|i| RawItem {
            item_id: i,
            title: format!("Item {i}"),
            release_year: Some(1990),
            genres: vec!["Drama".into()],
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples: Vec<LabeledExample> = (0..n)
        .map(|_| {
            let user_id = rng.random_range(1..=20u32);
            let item_id = rng.random_range(1..=40u32);
            let mut label = ((user_id % 2 == 0) ^ (item_id % 2 == 0)) as u8;
            if rng.random_bool(0.05) {
                label ^= 1;
            }
            LabeledExample {
                user_id,
                item_id,
                timestamp: 0,
                context: ContextFields::new(12, Weekday::ALL[0]),
                label,
                original_rating: if label == 1 { 5 } else { 1 },
            }
        })
        .collect();
    let catalog = Catalog::new(&users, &items);
    let cfg = FeatureConfig {
        fields: vec!["gender".into(), "item_id".into()],
        embed_dim: 8,
        ..FeatureConfig::default()
    };
    let cut = n * 4 / 5;
    let schema = FeatureSchema::build(&cfg, &examples[..cut], &catalog).unwrap();
    let train = EncodedSet::encode(&schema, &examples[..cut], &catalog, None).unwrap();
    let valid = EncodedSet::encode(&schema, &examples[cut..], &catalog, None).unwrap();
    Toy {
        catalog,
        schema,
        train,
        valid,
    }
}

fn widedeep(schema: &FeatureSchema, store: &mut ParamStore) -> Model {
    let cfg = ModelConfig {
        mlp: vec![32, 16],
        ..ModelConfig::of(ModelKind::WideDeep)
    };
    Model::new(&cfg, schema, store, 3).unwrap()
}

fn fast() -> TrainConfig {
    TrainConfig {
        batch_size: 128,
        learning_rate: 1e-2,
        max_epochs: 20,
        patience: 3,
        seed: 9,
        deterministic: true,
    }
}

#[test]
fn widedeep_learns_a_separable_interaction() {
    let t = toy(2500, 1);
    let mut store = ParamStore::new();
    let model = widedeep(&t.schema, &mut store);
    let out = train(&model, &mut store, &t.train, &t.valid, &fast(), |_| {}).unwrap();
    assert!(out.best.auc > 0.9, "best valid AUC {}", out.best.auc);
    assert!(out.history.len() <= 20);
    let last = out.history.last().unwrap();
    assert!(last.train_logloss < out.history[0].train_logloss);
}

#[test]
fn deterministic_training_is_repeatable() {
    let t = toy(800, 2);
    let run = || {
        let mut store = ParamStore::new();
        let model = widedeep(&t.schema, &mut store);
        let cfg = TrainConfig {
            max_epochs: 3,
            ..fast()
        };
        let out = train(&model, &mut store, &t.train, &t.valid, &cfg, |_| {}).unwrap();
        let probs = predict_all(&model, &store, &t.valid, 64, ExecPolicy::Sequential).unwrap();
        let losses: Vec<(f64, f64)> = out.history.iter().map(|h| (h.train_logloss, h.valid_auc)).collect();
        (losses, probs)
    };
    assert_eq!(run(), run());
}

#[test]
fn restored_parameters_reproduce_the_best_epoch() {
    let t = toy(800, 3);
    let mut store = ParamStore::new();
    let model = widedeep(&t.schema, &mut store);
    let cfg = TrainConfig {
        max_epochs: 12,
        patience: 2,
        ..fast()
    };
    let mut seen = Vec::new();
    let out = train(&model, &mut store, &t.train, &t.valid, &cfg, |r| seen.push(r.epoch)).unwrap();
    assert_eq!(seen, (1..=out.history.len()).collect::<Vec<_>>());
    let best_hist = out.history.iter().map(|h| h.valid_auc).fold(f64::MIN, f64::max);
    assert_eq!(out.best.auc, best_hist);
    let first_best = out.history.iter().find(|h| h.valid_auc == best_hist).unwrap().epoch;
    assert_eq!(out.best.epoch, first_best);
    if out.stopped_early {
        assert_eq!(out.history.len(), first_best + cfg.patience);
    }
    let again = evaluate(&model, &store, &t.valid, 4096, ExecPolicy::Sequential).unwrap();
    assert_eq!(again.auc, out.best.auc);
    assert_eq!(again.logloss, out.best.logloss);
}

#[test]
fn parallel_and_sequential_evaluation_agree() {
    let t = toy(1000, 4);
    let mut store = ParamStore::new();
    let model = widedeep(&t.schema, &mut store);
    let a = predict_all(&model, &store, &t.valid, 17, ExecPolicy::Sequential).unwrap();
    let b = predict_all(&model, &store, &t.valid, 17, ExecPolicy::Parallel).unwrap();
    assert_eq!(a, b);
    let e1 = evaluate(&model, &store, &t.valid, 50, ExecPolicy::Parallel).unwrap();
    let e2 = evaluate(&model, &store, &t.valid, 50, ExecPolicy::Parallel).unwrap();
    assert_eq!((e1.auc, e1.logloss), (e2.auc, e2.logloss));
}

#[test]
fn single_class_validation_is_an_error() {
    let t = toy(400, 5);
    let rows: Vec<usize> = (0..t.valid.len()).filter(|&i| t.valid.labels[i] == 1.0).collect();
    assert!(!rows.is_empty());
    let mut store = ParamStore::new();
    let model = widedeep(&t.schema, &mut store);
    let probs = predict_all(&model, &store, &t.valid, 64, ExecPolicy::Sequential).unwrap();
    let labels: Vec<f32> = rows.iter().map(|&i| t.valid.labels[i]).collect();
    let picked: Vec<f64> = rows.iter().map(|&i| probs[i]).collect();
    assert!(matches!(
        textrec_core::metrics::auc(&labels, &picked),
        Err(MetricError::SingleClass { negatives: 0, .. })
    ));
}

#[test]
fn bad_config_is_rejected_before_training() {
    let t = toy(200, 6);
    let mut store = ParamStore::new();
    let model = widedeep(&t.schema, &mut store);
    let cfg = TrainConfig {
        batch_size: 0,
        ..fast()
    };
    assert!(matches!(
        train(&model, &mut store, &t.train, &t.valid, &cfg, |_| {}),
        Err(TrainError::Config(_))
    ));
}

#[test]
fn ranking_excludes_seen_items_and_breaks_ties_by_id() {
    let t = toy(1500, 7);
    let mut store = ParamStore::new();
    let model = widedeep(&t.schema, &mut store);
    let cfg = TrainConfig {
        max_epochs: 8,
        ..fast()
    };
    train(&model, &mut store, &t.train, &t.valid, &cfg, |_| {}).unwrap();
    let ctx = RankingContext {
        schema: &t.schema,
        catalog: &t.catalog,
        text: None,
    };
    let context = ContextFields::new(9, Weekday::ALL[2]);
    let candidates: Vec<u32> = (1..=40).chain([4, 4]).collect();
    let seen: HashSet<u32> = [2, 3].into_iter().collect();
    // User 2 is F: odd items are the positives.
    let top = rank_top_n(&model, &store, &ctx, 2, context, &candidates, 5, &seen).unwrap();
    assert_eq!(top.len(), 5);
    assert!(top.iter().all(|(i, _)| !seen.contains(i)));
    assert!(top.windows(2).all(|w| w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)));
    assert!(top.iter().filter(|(i, _)| i % 2 == 1).count() >= 4, "{top:?}");
    let all = rank_top_n(&model, &store, &ctx, 2, context, &candidates, 100, &seen).unwrap();
    assert_eq!(all.len(), 38);
    assert!(rank_top_n(&model, &store, &ctx, 2, context, &candidates, 0, &seen).unwrap().is_empty());

    // Untrained wide/deep weights at zero give every item the same score.
    let mut flat = ParamStore::new();
    let m = widedeep(&t.schema, &mut flat);
    let ids: Vec<_> = flat.iter().map(|(id, _)| id).collect();
    for id in ids {
        let z = textrec_tensor::Tensor::zeros(flat.get(id).value().shape());
        flat.set_value(id, z).unwrap();
    }
    let tied = rank_top_n(&m, &flat, &ctx, 2, context, &[9, 5, 7, 1], 3, &HashSet::new()).unwrap();
    assert_eq!(tied.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1, 5, 7]);
}
