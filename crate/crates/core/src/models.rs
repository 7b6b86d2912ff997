//! Click-prediction models over the concatenated field input: WideDeep,
//! xDeepFM (linear + CIN + MLP), DCNv2 and EulerNet.

use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use textrec_tensor::{init, kernels, ExecPolicy, ParamId, ParamStore, Tape, Tensor, Var};
use thiserror::Error;

use crate::features::{EncodedBatch, FeatureError, FeatureParams, FeatureSchema};

/// Added to `|e|` before taking the log in EulerNet.
pub const EULER_EPS: f32 = 1e-6;
/// Largest logit magnitude whose sigmoid stays strictly inside (0, 1) in `f64`.
pub const MAX_LOGIT: f64 = 36.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),

    #[error(transparent)]
    Feature(#[from] FeatureError),

    #[error(transparent)]
    Tensor(#[from] textrec_tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    WideDeep,
    XDeepFm,
    DcnV2,
    EulerNet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::WideDeep, ModelKind::XDeepFm, ModelKind::DcnV2, ModelKind::EulerNet];

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::WideDeep => "WideDeep",
            ModelKind::XDeepFm => "xDeepFM",
            ModelKind::DcnV2 => "DCNv2",
            ModelKind::EulerNet => "EulerNet",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.display_name().eq_ignore_ascii_case(s) || serde_json::to_value(k).unwrap() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub mlp: Vec<usize>,
    pub cin: Vec<usize>,
    pub cross_layers: usize,
    pub euler_orders: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::WideDeep,
            mlp: vec![256, 256, 256],
            cin: vec![100, 100],
            cross_layers: 3,
            euler_orders: 30,
        }
    }
}

impl ModelConfig {
    pub fn of(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mlp.contains(&0) || self.cin.contains(&0) {
            return Err(ModelError::Config("layer sizes must be positive".into()));
        }
        match self.kind {
            ModelKind::XDeepFm if self.cin.is_empty() => Err(ModelError::Config("xDeepFM needs at least one CIN layer".into())),
            ModelKind::EulerNet if self.euler_orders == 0 => Err(ModelError::Config("EulerNet needs at least one order unit".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), init::xavier_uniform_with(&[fan_in, fan_out], fan_in, fan_out, rng)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.matmul(tape.param(store, self.w))?.add_row(tape.param(store, self.b))?)
    }
}

/// ReLU hidden layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, sizes: &[usize], rng: &mut R) -> Self {
        let mut fan_in = input;
        let layers = sizes
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let l = Linear::new(store, &format!("{name}.{i}"), fan_in, h, rng);
                fan_in = h;
                l
            })
            .collect();
        Mlp { layers }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, mut x: Var<'t>) -> Result<Var<'t>> {
        for l in &self.layers {
            x = l.forward(tape, store, x)?.relu()?;
        }
        Ok(x)
    }
}

/// Compressed interaction network: one weight matrix `[H_k x H_{k-1}*F]` per layer.
#[derive(Clone, Debug)]
pub struct Cin {
    pub layers: Vec<ParamId>,
    pub head: Linear,
}

impl Cin {
    fn new<R: Rng>(store: &mut ParamStore, fields: usize, sizes: &[usize], rng: &mut R) -> Self {
        let mut prev = fields;
        let layers = sizes
            .iter()
            .enumerate()
            .map(|(k, &h)| {
                let m = prev * fields;
                prev = h;
                store.add(format!("cin.{k}"), init::xavier_uniform_with(&[h, m], m, h, rng))
            })
            .collect();
        let head = Linear::new(store, "cin.head", sizes.iter().sum(), 1, rng);
        Cin { layers, head }
    }
}

/// CIN logit `[B x 1]` for a field matrix `x0` of shape `[B, F, d]`.
///
/// Layer `k` computes `X^k_h = sum_{i,j} W^k[h, i*F + j] * (X^{k-1}_i o X^0_j)`; each
/// feature map is sum-pooled over `d` and the pooled values of all layers feed
/// the linear head.
pub fn cin_forward<'t>(tape: &'t Tape, store: &ParamStore, cin: &Cin, x0: Var<'t>) -> Result<Var<'t>> {
    let mut x = x0;
    let mut pooled = Vec::with_capacity(cin.layers.len());
    for &w in &cin.layers {
        x = tape.param(store, w).mix_rows(x.outer_hadamard(x0)?)?;
        pooled.push(x.sum_last_axis()?);
    }
    let p = tape.concat(&pooled, 1)?;
    cin.head.forward(tape, store, p)
}

/// Full-rank cross layers `x_{l+1} = x0 * (x_l W_l + b_l) + x_l` on `[B x D]` rows.
pub fn cross_stack<'t>(tape: &'t Tape, store: &ParamStore, layers: &[Linear], x0: Var<'t>) -> Result<Var<'t>> {
    let mut x = x0;
    for l in layers {
        x = x0.mul(l.forward(tape, store, x)?)?.add(x)?;
    }
    Ok(x)
}

/// EulerNet order units over a field matrix `e` (`[B, F, d]`) with exponents
/// `alpha` (`[O x F]`). Returns real and imaginary parts, each `[B, O, d]`.
///
/// Each entry is written in polar form with modulus `|e| + EULER_EPS` and phase
/// `0` or `pi` by sign; unit `o` has modulus `exp(sum_j alpha[o,j] ln r_j)` and
/// phase `sum_j alpha[o,j] theta_j`.
pub fn euler_units<'t>(tape: &'t Tape, alpha: Var<'t>, e: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let ev = e.value();
    let theta: Vec<f32> = ev.data().iter().map(|&v| if v < 0.0 { PI } else { 0.0 }).collect();
    let theta = tape.constant(Tensor::from_vec(ev.shape().to_vec(), theta)?);
    let log_r = e.abs()?.add_scalar(EULER_EPS)?.ln()?;
    let m = alpha.mix_rows(log_r)?.exp()?;
    let phi = alpha.mix_rows(theta)?;
    Ok((m.mul(phi.cos()?)?, m.mul(phi.sin()?)?))
}

#[derive(Clone, Debug)]
enum Net {
    WideDeep {
        wide: Vec<ParamId>,
        wide_bias: ParamId,
        mlp: Mlp,
        out: Linear,
    },
    XDeepFm {
        linear: Vec<ParamId>,
        linear_bias: ParamId,
        cin: Cin,
        mlp: Mlp,
        out: Linear,
    },
    DcnV2 {
        cross: Vec<Linear>,
        mlp: Mlp,
        out: Linear,
    },
    EulerNet {
        alpha: ParamId,
        out: Linear,
    },
}

/// A model's parameter handles; the values live in a `ParamStore`.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub features: FeatureParams,
    blocks: usize,
    block_dim: Option<usize>,
    total_dim: usize,
    net: Net,
}

impl Model {
    pub fn new(config: &ModelConfig, schema: &FeatureSchema, store: &mut ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = FeatureParams::init(schema, store, &mut rng);
        let total = schema.total_dim();
        let blocks = schema.num_blocks();
        let block_dim = schema.uniform_dim();
        let needs_matrix = matches!(config.kind, ModelKind::XDeepFm | ModelKind::EulerNet);
        if needs_matrix && block_dim.is_none() {
            return Err(ModelError::Config(format!(
                "{} needs every block (text projections included) to have the same width",
                config.kind.display_name()
            )));
        }
        let mlp_out = config.mlp.last().copied().unwrap_or(total);
        let wide_tables = |store: &mut ParamStore, prefix: &str| -> Vec<ParamId> {
            schema
                .fields
                .iter()
                .map(|s| store.add(format!("{prefix}.{}", s.name), Tensor::zeros(&[s.input_size, 1])))
                .collect()
        };
        let net = match config.kind {
            ModelKind::WideDeep => Net::WideDeep {
                wide: wide_tables(store, "wide"),
                wide_bias: store.add("wide.bias", Tensor::zeros(&[1])),
                mlp: Mlp::new(store, "mlp", total, &config.mlp, &mut rng),
                out: Linear::new(store, "mlp.out", mlp_out, 1, &mut rng),
            },
            ModelKind::XDeepFm => Net::XDeepFm {
                linear: wide_tables(store, "linear"),
                linear_bias: store.add("linear.bias", Tensor::zeros(&[1])),
                cin: Cin::new(store, blocks, &config.cin, &mut rng),
                mlp: Mlp::new(store, "mlp", total, &config.mlp, &mut rng),
                out: Linear::new(store, "mlp.out", mlp_out, 1, &mut rng),
            },
            ModelKind::DcnV2 => Net::DcnV2 {
                cross: (0..config.cross_layers)
                    .map(|l| Linear::new(store, &format!("cross.{l}"), total, total, &mut rng))
                    .collect(),
                mlp: Mlp::new(store, "mlp", total, &config.mlp, &mut rng),
                out: Linear::new(store, "out", total + mlp_out, 1, &mut rng),
            },
            ModelKind::EulerNet => {
                let o = config.euler_orders;
                let d = block_dim.unwrap();
                Net::EulerNet {
                    alpha: store.add("euler.alpha", init::xavier_uniform_with(&[o, blocks], blocks, o, &mut rng)),
                    out: Linear::new(store, "euler.out", 2 * o * d, 1, &mut rng),
                }
            }
        };
        Ok(Model {
            config: config.clone(),
            features,
            blocks,
            block_dim,
            total_dim: total,
            net,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.total_dim
    }

    /// Logits `[B x 1]`.
    pub fn logits<'t>(&self, tape: &'t Tape, store: &ParamStore, batch: &EncodedBatch) -> Result<Var<'t>> {
        let x = self.features.concat_features(tape, store, batch)?;
        let b = batch.len();
        let wide_sum = |tables: &[ParamId], bias: ParamId| -> Result<Var<'t>> {
            let mut acc = tape.constant(Tensor::zeros(&[b, 1])).add_row(tape.param(store, bias))?;
            for (t, bag) in tables.iter().zip(&batch.bags) {
                acc = acc.add(tape.embedding_bag(tape.param(store, *t), bag.clone())?)?;
            }
            Ok(acc)
        };
        let field_matrix = |x: Var<'t>| -> Result<Var<'t>> {
            Ok(x.reshape(&[b, self.blocks, self.block_dim.expect("checked at construction")])?)
        };
        match &self.net {
            Net::WideDeep {
                wide,
                wide_bias,
                mlp,
                out,
            } => {
                let deep = out.forward(tape, store, mlp.forward(tape, store, x)?)?;
                Ok(wide_sum(wide, *wide_bias)?.add(deep)?)
            }
            Net::XDeepFm {
                linear,
                linear_bias,
                cin,
                mlp,
                out,
            } => {
                let lin = wide_sum(linear, *linear_bias)?;
                let c = cin_forward(tape, store, cin, field_matrix(x)?)?;
                let deep = out.forward(tape, store, mlp.forward(tape, store, x)?)?;
                Ok(lin.add(c)?.add(deep)?)
            }
            Net::DcnV2 { cross, mlp, out } => {
                let c = cross_stack(tape, store, cross, x)?;
                let d = mlp.forward(tape, store, x)?;
                out.forward(tape, store, tape.concat(&[c, d], 1)?)
            }
            Net::EulerNet { alpha, out } => {
                let (re, im) = euler_units(tape, tape.param(store, *alpha), field_matrix(x)?)?;
                let flat = tape.concat(&[re, im], 1)?.reshape(&[b, 2 * re.shape()[1] * re.shape()[2]])?;
                out.forward(tape, store, flat)
            }
        }
    }

    /// Click probabilities, one per example. The sigmoid is taken in `f64` on
    /// logits clamped to `MAX_LOGIT`, so no prediction rounds to exactly 0 or 1.
    pub fn predict_batch(&self, store: &ParamStore, batch: &EncodedBatch, policy: ExecPolicy) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let tape = Tape::with_policy(policy);
        let logits = self.logits(&tape, store, batch)?.to_vec();
        Ok(logits.into_iter().map(|z| kernels::log_sigmoid((z as f64).clamp(-MAX_LOGIT, MAX_LOGIT)).exp()).collect())
    }

    /// Mean binary cross-entropy of the batch; call `tape.backward` on the result.
    pub fn loss<'t>(&self, tape: &'t Tape, store: &ParamStore, batch: &EncodedBatch) -> Result<Var<'t>> {
        Ok(self.logits(tape, store, batch)?.bce_with_logits(&batch.labels)?)
    }
}
