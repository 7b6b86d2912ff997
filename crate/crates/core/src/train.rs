//! Mini-batch training with early stopping on validation AUC, batched
//! evaluation and top-N ranking.

use std::collections::HashSet;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use textrec_tensor::{exec, Adam, AdamConfig, ExecPolicy, ParamStore, Tape, Tensor, TensorError};
use thiserror::Error;

use crate::data::{ContextFields, LabeledExample};
use crate::features::{Catalog, EncodedSet, FeatureError, FeatureSchema, TextTable};
use crate::metrics::{self, MetricError};
use crate::models::{Model, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    DivergedLoss { epoch: usize, batch: usize, detail: String },

    #[error("invalid train config: {0}")]
    Config(String),

    #[error(transparent)]
    Metric(#[from] MetricError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Feature(#[from] FeatureError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4096,
            learning_rate: 1e-3,
            max_epochs: 50,
            patience: 5,
            seed: 42,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn policy(&self) -> ExecPolicy {
        if self.deterministic {
            ExecPolicy::Sequential
        } else {
            ExecPolicy::Parallel
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub logloss: f64,
    pub epoch: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_logloss: f64,
    pub valid_auc: f64,
    pub valid_logloss: f64,
    pub seconds: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_logloss,valid_auc,valid_logloss,seconds";

pub fn write_history_csv<W: Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "{HISTORY_HEADER}")?;
    for r in history {
        writeln!(
            w,
            "{},{:.9},{:.9},{:.9},{:.3}",
            r.epoch, r.train_logloss, r.valid_auc, r.valid_logloss, r.seconds
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation AUC and how long it has gone unimproved.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, auc: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if auc <= b => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, auc));
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: MetricReport,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

fn snapshot(store: &ParamStore) -> Vec<Tensor> {
    store.iter().map(|(_, p)| p.value().clone()).collect()
}

fn restore(store: &mut ParamStore, values: Vec<Tensor>) {
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (id, v) in ids.into_iter().zip(values) {
        store.set_value(id, v).expect("snapshot shapes match");
    }
}

fn diverged(epoch: usize, batch: usize, e: ModelError) -> TrainError {
    match e {
        ModelError::Tensor(TensorError::Domain { op, reason }) => TrainError::DivergedLoss {
            epoch,
            batch,
            detail: format!("{op}: {reason}"),
        },
        other => TrainError::Model(other),
    }
}

/// Trains `model` in place and leaves the best-validation-AUC parameters in `store`.
///
/// `on_epoch` sees every history row as it is produced.
pub fn train(
    model: &Model,
    store: &mut ParamStore,
    train_set: &EncodedSet,
    valid_set: &EncodedSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::Metric(MetricError::EmptyInput));
    }
    let policy = config.policy();
    let mut adam = Adam::new(AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopper::new(config.patience);
    let mut history = Vec::new();
    let mut best: Option<(MetricReport, Vec<Tensor>)> = None;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for (bi, rows) in order.chunks(config.batch_size).enumerate() {
            let batch = train_set.batch(rows);
            let tape = Tape::with_policy(policy);
            let loss = model.loss(&tape, store, &batch).map_err(|e| diverged(epoch, bi, e))?;
            let value = loss.to_vec()[0];
            if !value.is_finite() {
                return Err(TrainError::DivergedLoss {
                    epoch,
                    batch: bi,
                    detail: format!("loss {value}"),
                });
            }
            loss_sum += value as f64 * rows.len() as f64;
            tape.backward(loss, store)
                .map_err(|e| diverged(epoch, bi, ModelError::Tensor(e)))?;
            adam.step(store)
                .map_err(|e| diverged(epoch, bi, ModelError::Tensor(e)))?;
        }
        let valid = evaluate(model, store, valid_set, config.batch_size, policy)?;
        let record = EpochRecord {
            epoch,
            train_logloss: loss_sum / train_set.len() as f64,
            valid_auc: valid.auc,
            valid_logloss: valid.logloss,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record.clone());
        let decision = stopper.observe(epoch, valid.auc);
        if decision == StopDecision::Improved {
            let report = MetricReport {
                epoch,
                seconds: record.seconds,
                ..valid
            };
            best = Some((report, snapshot(store)));
        }
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }
    let (best, values) = best.expect("at least one epoch ran");
    restore(store, values);
    Ok(TrainOutcome {
        best,
        history,
        stopped_early,
    })
}

/// Probabilities for every example of `set`, in order.
pub fn predict_all(model: &Model, store: &ParamStore, set: &EncodedSet, batch_size: usize, policy: ExecPolicy) -> Result<Vec<f64>> {
    let batch_size = batch_size.max(1);
    let n_batches = set.len().div_ceil(batch_size);
    // Batches fan out across threads; each forward pass runs sequentially.
    let parts = exec::map_indexed(policy, n_batches, |i| {
        let batch = set.range(i * batch_size, ((i + 1) * batch_size).min(set.len()));
        model.predict_batch(store, &batch, ExecPolicy::Sequential)
    });
    let mut out = Vec::with_capacity(set.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// AUC and LogLoss over the whole set.
pub fn evaluate(model: &Model, store: &ParamStore, set: &EncodedSet, batch_size: usize, policy: ExecPolicy) -> Result<MetricReport> {
    let start = Instant::now();
    let probs = predict_all(model, store, set, batch_size, policy)?;
    Ok(MetricReport {
        auc: metrics::auc(&set.labels, &probs)?,
        logloss: metrics::logloss(&set.labels, &probs)?,
        epoch: 0,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Everything needed to encode fresh (user, item, context) triples.
pub struct RankingContext<'a> {
    pub schema: &'a FeatureSchema,
    pub catalog: &'a Catalog,
    pub text: Option<Arc<TextTable>>,
}

/// Up to `n` unseen candidates by descending probability; equal scores go to the lower item id.
#[allow(clippy::too_many_arguments)]
pub fn rank_top_n(
    model: &Model,
    store: &ParamStore,
    ctx: &RankingContext<'_>,
    user_id: u32,
    context: ContextFields,
    candidates: &[u32],
    n: usize,
    seen: &HashSet<u32>,
) -> Result<Vec<(u32, f64)>> {
    let mut items: Vec<u32> = candidates.iter().copied().filter(|i| !seen.contains(i)).collect();
    items.sort_unstable();
    items.dedup();
    if items.is_empty() || n == 0 {
        return Ok(Vec::new());
    }
    let examples: Vec<LabeledExample> = items
        .iter()
        .map(|&item_id| LabeledExample {
            user_id,
            item_id,
            timestamp: 0,
            context,
            label: 0,
            original_rating: 0,
        })
        .collect();
    let set = EncodedSet::encode(ctx.schema, &examples, ctx.catalog, ctx.text.clone())?;
    let probs = predict_all(model, store, &set, 4096, ExecPolicy::Sequential)?;
    let mut scored: Vec<(u32, f64)> = items.into_iter().zip(probs).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(n);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopper_stops_after_patience() {
        let mut s = EarlyStopper::new(2);
        assert_eq!(s.observe(1, 0.7), StopDecision::Improved);
        assert_eq!(s.observe(2, 0.6), StopDecision::Continue);
        assert_eq!(s.observe(3, 0.5), StopDecision::Stop);
        assert_eq!(s.best(), Some((1, 0.7)));
    }

    #[test]
    fn equal_auc_is_not_an_improvement() {
        let mut s = EarlyStopper::new(1);
        s.observe(1, 0.7);
        assert_eq!(s.observe(2, 0.7), StopDecision::Stop);
    }

    #[test]
    fn history_csv_format() {
        let mut buf = Vec::new();
        write_history_csv(
            &mut buf,
            &[EpochRecord {
                epoch: 1,
                train_logloss: 0.5,
                valid_auc: 0.75,
                valid_logloss: 0.25,
                seconds: 1.5,
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_logloss,valid_auc,valid_logloss,seconds\n1,0.500000000,0.750000000,0.250000000,1.500\n"
        );
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(
            TrainConfig {
                deterministic: true,
                ..TrainConfig::default()
            }
            .policy(),
            ExecPolicy::Sequential
        );
    }
}
