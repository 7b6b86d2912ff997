//! Categorical vocabularies, the fixed field layout, batch encoding and the
//! concatenated model input.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::rc::Rc;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use textrec_tensor::{init, Bag, ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use thiserror::Error;

use crate::data::{LabeledExample, RawItem, RawUser};
use crate::verbalize::EntityKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("unknown feature field {0:?}")]
    UnknownField(String),

    #[error("field order mismatch: expected {expected}, found {found}")]
    FieldOrderMismatch { expected: String, found: String },

    #[error("no text embedding for {count} {kind} key(s), e.g. {example:?}; run `textrec embed` first")]
    MissingTextEmbedding {
        kind: &'static str,
        count: usize,
        example: String,
    },

    #[error("text embedding dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("example references unknown {kind} {id}")]
    UnknownReference { kind: &'static str, id: u32 },

    #[error("invalid feature config: {0}")]
    Config(String),

    #[error("feature sidecar {path}: {reason}")]
    Sidecar { path: String, reason: String },

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Which entity a field describes. Fields are laid out in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldGroup {
    User,
    Item,
    Context,
}

impl FieldGroup {
    pub const ALL: [FieldGroup; 3] = [FieldGroup::User, FieldGroup::Item, FieldGroup::Context];

    pub fn entity(self) -> EntityKind {
        match self {
            FieldGroup::User => EntityKind::User,
            FieldGroup::Item => EntityKind::Item,
            FieldGroup::Context => EntityKind::Context,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Exactly one value per example.
    Categorical,
    /// Zero or more values, embeddings summed.
    MultiHot,
    /// Frozen language-model vector projected to `d_t`.
    TextEmbedding,
}

/// The ML-1M fields this pipeline knows how to extract.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Field {
    UserId,
    Gender,
    Age,
    Occupation,
    ZipPrefix,
    ItemId,
    Decade,
    Genres,
    Hour,
    Weekday,
}

impl Field {
    pub const ALL: [Field; 10] = [
        Field::UserId,
        Field::Gender,
        Field::Age,
        Field::Occupation,
        Field::ZipPrefix,
        Field::ItemId,
        Field::Decade,
        Field::Genres,
        Field::Hour,
        Field::Weekday,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::UserId => "user_id",
            Field::Gender => "gender",
            Field::Age => "age",
            Field::Occupation => "occupation",
            Field::ZipPrefix => "zip_prefix",
            Field::ItemId => "item_id",
            Field::Decade => "decade",
            Field::Genres => "genres",
            Field::Hour => "hour",
            Field::Weekday => "weekday",
        }
    }

    pub fn parse(name: &str) -> Result<Field> {
        Field::ALL
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| FeatureError::UnknownField(name.to_string()))
    }

    pub fn group(self) -> FieldGroup {
        match self {
            Field::UserId | Field::Gender | Field::Age | Field::Occupation | Field::ZipPrefix => {
                FieldGroup::User
            }
            Field::ItemId | Field::Decade | Field::Genres => FieldGroup::Item,
            Field::Hour | Field::Weekday => FieldGroup::Context,
        }
    }

    pub fn kind(self) -> FieldKind {
        match self {
            Field::Genres => FieldKind::MultiHot,
            _ => FieldKind::Categorical,
        }
    }

    /// Raw string values of this field for one example.
    pub fn values(self, user: &RawUser, item: &RawItem, ex: &LabeledExample) -> Vec<String> {
        match self {
            Field::UserId => vec![user.user_id.to_string()],
            Field::Gender => vec![user.gender.code().to_string()],
            Field::Age => vec![user.age_code.to_string()],
            Field::Occupation => vec![user.occupation_code.to_string()],
            Field::ZipPrefix => vec![user.zip_prefix()],
            Field::ItemId => vec![item.item_id.to_string()],
            Field::Decade => item.decade().into_iter().collect(),
            Field::Genres => item.genres.clone(),
            Field::Hour => vec![ex.context.hour_of_day.to_string()],
            Field::Weekday => vec![ex.context.day_of_week.short().to_string()],
        }
    }
}

/// Value-to-index map; index 0 is reserved for unseen and rare values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    values: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(values: Vec<String>) -> Self {
        let index = values
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i as u32 + 1))
            .collect();
        Vocabulary { values, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.values
    }
}

impl Vocabulary {
    pub const OOV: u32 = 0;

    /// Values seen at least `min_freq` times, by frequency descending then value ascending.
    pub fn build<I, S>(values: I, min_freq: usize) -> Vocabulary
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let min_freq = min_freq.max(1);
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for v in values {
            *counts.entry(v.as_ref().to_string()).or_default() += 1;
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        // BTreeMap order is value-ascending and the sort is stable.
        kept.sort_by(|a, b| b.1.cmp(&a.1));
        Vocabulary::from(kept.into_iter().map(|(v, _)| v).collect::<Vec<_>>())
    }

    pub fn encode(&self, value: &str) -> u32 {
        self.index.get(value).copied().unwrap_or(Self::OOV)
    }

    /// Number of rows in the embedding table, OOV included.
    pub fn size(&self) -> usize {
        self.values.len() + 1
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Field names in layout order: user fields, then item, then context.
    pub fields: Vec<String>,
    pub embed_dim: usize,
    pub text_dim: usize,
    pub min_freq: usize,
    pub zip_min_freq: usize,
    pub l2_normalize_text: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            fields: Field::ALL.iter().map(|f| f.name().to_string()).collect(),
            embed_dim: 16,
            text_dim: 16,
            min_freq: 1,
            zip_min_freq: 5,
            l2_normalize_text: false,
        }
    }
}

impl FeatureConfig {
    /// Parsed fields, checked for grouping order and duplicates.
    pub fn parsed_fields(&self) -> Result<Vec<Field>> {
        let fields: Vec<Field> = self.fields.iter().map(|n| Field::parse(n)).collect::<Result<_>>()?;
        if fields.is_empty() {
            return Err(FeatureError::Config("no fields selected".into()));
        }
        for (i, f) in fields.iter().enumerate() {
            if fields[..i].contains(f) {
                return Err(FeatureError::Config(format!("field {} listed twice", f.name())));
            }
        }
        if fields.windows(2).any(|w| w[0].group() > w[1].group()) {
            let mut sorted = fields.clone();
            sorted.sort_by_key(|f| f.group());
            return Err(FeatureError::FieldOrderMismatch {
                expected: names(&sorted),
                found: names(&fields),
            });
        }
        if self.embed_dim == 0 || self.text_dim == 0 {
            return Err(FeatureError::Config("embedding dims must be positive".into()));
        }
        Ok(fields)
    }
}

fn names(fields: &[Field]) -> String {
    fields.iter().map(|f| f.name()).collect::<Vec<_>>().join(",")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub group: FieldGroup,
    pub kind: FieldKind,
    /// Embedding table rows (categorical), or the source vector width (text).
    pub input_size: usize,
    /// Width of this field's block in the concatenated input.
    pub dim: usize,
}

/// User and item records by id.
#[derive(Clone, Debug, Default)]
pub struct Catalog {
    pub users: HashMap<u32, RawUser>,
    pub items: HashMap<u32, RawItem>,
}

impl Catalog {
    pub fn new(users: &[RawUser], items: &[RawItem]) -> Self {
        Catalog {
            users: users.iter().map(|u| (u.user_id, u.clone())).collect(),
            items: items.iter().map(|i| (i.item_id, i.clone())).collect(),
        }
    }

    fn lookup(&self, ex: &LabeledExample) -> Result<(&RawUser, &RawItem)> {
        let u = self.users.get(&ex.user_id).ok_or(FeatureError::UnknownReference {
            kind: "user",
            id: ex.user_id,
        })?;
        let i = self.items.get(&ex.item_id).ok_or(FeatureError::UnknownReference {
            kind: "item",
            id: ex.item_id,
        })?;
        Ok((u, i))
    }
}

/// Field layout plus vocabularies; persisted as a JSON sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub embed_dim: usize,
    pub fields: Vec<FieldSpec>,
    pub vocabs: Vec<Vocabulary>,
    /// Text blocks (user, item, context), present only in enriched mode.
    pub text: Vec<FieldSpec>,
}

impl FeatureSchema {
    /// Builds vocabularies from the training examples.
    pub fn build(config: &FeatureConfig, train: &[LabeledExample], catalog: &Catalog) -> Result<Self> {
        let fields = config.parsed_fields()?;
        let mut columns: Vec<Vec<String>> = vec![Vec::new(); fields.len()];
        for ex in train {
            let (u, i) = catalog.lookup(ex)?;
            for (col, f) in columns.iter_mut().zip(&fields) {
                col.extend(f.values(u, i, ex));
            }
        }
        let mut specs = Vec::new();
        let mut vocabs = Vec::new();
        for (f, col) in fields.iter().zip(columns) {
            let min_freq = if *f == Field::ZipPrefix {
                config.zip_min_freq
            } else {
                config.min_freq
            };
            let vocab = Vocabulary::build(col, min_freq);
            specs.push(FieldSpec {
                name: f.name().to_string(),
                group: f.group(),
                kind: f.kind(),
                input_size: vocab.size(),
                dim: config.embed_dim,
            });
            vocabs.push(vocab);
        }
        Ok(FeatureSchema {
            version: SCHEMA_VERSION,
            embed_dim: config.embed_dim,
            fields: specs,
            vocabs,
            text: Vec::new(),
        })
    }

    /// Same schema with the three text blocks appended.
    pub fn enriched(mut self, source_dim: usize, text_dim: usize) -> Self {
        self.text = FieldGroup::ALL
            .iter()
            .map(|g| FieldSpec {
                name: format!("{}_text", g.entity().name()),
                group: *g,
                kind: FieldKind::TextEmbedding,
                input_size: source_dim,
                dim: text_dim,
            })
            .collect();
        self
    }

    /// Without the text blocks.
    pub fn raw(mut self) -> Self {
        self.text.clear();
        self
    }

    pub fn is_enriched(&self) -> bool {
        !self.text.is_empty()
    }

    pub fn text_source_dim(&self) -> Option<usize> {
        self.text.first().map(|t| t.input_size)
    }

    pub fn field_specs(&self) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().chain(&self.text)
    }

    /// Number of blocks in the concatenated input.
    pub fn num_blocks(&self) -> usize {
        self.fields.len() + self.text.len()
    }

    /// `(name, offset, width)` of every block.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let mut off = 0;
        self.field_specs()
            .map(|s| {
                let e = (s.name.clone(), off, s.dim);
                off += s.dim;
                e
            })
            .collect()
    }

    pub fn total_dim(&self) -> usize {
        self.field_specs().map(|s| s.dim).sum()
    }

    /// True when every block has the same width, so the input can be viewed
    /// as a `[blocks x d]` matrix per example.
    pub fn uniform_dim(&self) -> Option<usize> {
        let d = self.embed_dim;
        self.field_specs().all(|s| s.dim == d).then_some(d)
    }

    /// Hash of the field layout (vocabulary contents excluded), 16 hex chars.
    pub fn layout_hash(&self) -> String {
        let layout = serde_json::to_vec(&(&self.version, &self.fields, &self.text)).unwrap();
        let digest = Sha256::digest(&layout);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("schema serializes");
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sidecar = |reason: String| FeatureError::Sidecar {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path)?;
        let schema: FeatureSchema = serde_json::from_str(&text).map_err(|e| sidecar(e.to_string()))?;
        if schema.version != SCHEMA_VERSION {
            return Err(sidecar(format!("version {} (expected {SCHEMA_VERSION})", schema.version)));
        }
        if schema.vocabs.len() != schema.fields.len() {
            return Err(sidecar("field/vocabulary count differs".into()));
        }
        Ok(schema)
    }
}

/// Frozen text vectors keyed by entity key (`user:1`, `item:1`, `context:Thu-late-night`).
#[derive(Clone, Debug, Default)]
pub struct TextTable {
    dim: usize,
    rows: Vec<f32>,
    keys: HashMap<String, u32>,
}

impl TextTable {
    pub fn new(dim: usize) -> Self {
        TextTable {
            dim,
            rows: Vec::new(),
            keys: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, values: &[f32], l2_normalize: bool) -> Result<()> {
        if values.len() != self.dim {
            return Err(FeatureError::DimMismatch {
                expected: self.dim,
                got: values.len(),
            });
        }
        let key = key.into();
        if self.keys.contains_key(&key) {
            return Ok(());
        }
        let norm = if l2_normalize {
            let n = values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        } else {
            1.0
        };
        self.keys.insert(key, (self.rows.len() / self.dim) as u32);
        self.rows.extend(values.iter().map(|&v| (v as f64 / norm) as f32));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.keys
            .get(key)
            .map(|&r| &self.rows[r as usize * self.dim..(r as usize + 1) * self.dim])
    }

    fn row_of(&self, key: &str) -> Option<u32> {
        self.keys.get(key).copied()
    }

    fn row(&self, r: u32) -> &[f32] {
        &self.rows[r as usize * self.dim..(r as usize + 1) * self.dim]
    }
}

/// Entity keys of one example, matching the verbalizer's keys.
pub fn text_keys(ex: &LabeledExample) -> [String; 3] {
    [
        format!("user:{}", ex.user_id),
        format!("item:{}", ex.item_id),
        format!("context:{}", ex.context.key()),
    ]
}

/// Column-wise encoding of a whole example set.
#[derive(Clone, Debug)]
pub struct EncodedSet {
    layout_hash: String,
    offsets: Vec<Vec<usize>>,
    indices: Vec<Vec<u32>>,
    text_rows: Option<[Vec<u32>; 3]>,
    text: Option<Arc<TextTable>>,
    pub labels: Vec<f32>,
    pub item_ids: Vec<u32>,
}

impl EncodedSet {
    pub fn encode(
        schema: &FeatureSchema,
        examples: &[LabeledExample],
        catalog: &Catalog,
        text: Option<Arc<TextTable>>,
    ) -> Result<Self> {
        let fields: Vec<Field> = schema
            .fields
            .iter()
            .map(|s| Field::parse(&s.name))
            .collect::<Result<_>>()?;
        let mut offsets = vec![vec![0usize]; fields.len()];
        let mut indices = vec![Vec::new(); fields.len()];
        for ex in examples {
            let (u, i) = catalog.lookup(ex)?;
            for (k, f) in fields.iter().enumerate() {
                let vals = f.values(u, i, ex);
                let vocab = &schema.vocabs[k];
                match f.kind() {
                    FieldKind::MultiHot => indices[k].extend(vals.iter().map(|v| vocab.encode(v))),
                    _ => indices[k].push(vals.first().map_or(Vocabulary::OOV, |v| vocab.encode(v))),
                }
                offsets[k].push(indices[k].len());
            }
        }
        let (text_rows, text) = match (schema.text_source_dim(), text) {
            (None, _) => (None, None),
            (Some(_), None) => {
                return Err(FeatureError::MissingTextEmbedding {
                    kind: "text",
                    count: examples.len(),
                    example: "no text table supplied".into(),
                })
            }
            (Some(d), Some(table)) => {
                if table.dim() != d {
                    return Err(FeatureError::DimMismatch {
                        expected: d,
                        got: table.dim(),
                    });
                }
                let mut rows: [Vec<u32>; 3] = Default::default();
                for (g, kind) in ["user", "item", "context"].into_iter().enumerate() {
                    let mut missing = Vec::new();
                    for ex in examples {
                        let key = &text_keys(ex)[g];
                        match table.row_of(key) {
                            Some(r) => rows[g].push(r),
                            None => missing.push(key.clone()),
                        }
                    }
                    if !missing.is_empty() {
                        missing.sort();
                        missing.dedup();
                        return Err(FeatureError::MissingTextEmbedding {
                            kind,
                            count: missing.len(),
                            example: missing[0].clone(),
                        });
                    }
                }
                (Some(rows), Some(table))
            }
        };
        Ok(EncodedSet {
            layout_hash: schema.layout_hash(),
            offsets,
            indices,
            text_rows,
            text,
            labels: examples.iter().map(|e| e.label as f32).collect(),
            item_ids: examples.iter().map(|e| e.item_id).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn layout_hash(&self) -> &str {
        &self.layout_hash
    }

    /// Gathers the given example rows into a batch.
    pub fn batch(&self, rows: &[usize]) -> EncodedBatch {
        let bags = self
            .offsets
            .iter()
            .zip(&self.indices)
            .map(|(off, idx)| {
                let mut o = Vec::with_capacity(rows.len() + 1);
                let mut ix = Vec::new();
                o.push(0);
                for &r in rows {
                    ix.extend_from_slice(&idx[off[r]..off[r + 1]]);
                    o.push(ix.len());
                }
                Rc::new(Bag::new(o, ix))
            })
            .collect();
        let text = match (&self.text_rows, &self.text) {
            (Some(tr), Some(table)) => {
                let d = table.dim();
                let mats = tr
                    .iter()
                    .map(|col| {
                        let mut data = Vec::with_capacity(rows.len() * d);
                        for &r in rows {
                            data.extend_from_slice(table.row(col[r]));
                        }
                        Tensor::from_vec(vec![rows.len(), d], data).expect("gathered shape")
                    })
                    .collect();
                Some(mats)
            }
            _ => None,
        };
        EncodedBatch {
            layout_hash: self.layout_hash.clone(),
            bags,
            text,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    /// Contiguous range `[start, end)`.
    pub fn range(&self, start: usize, end: usize) -> EncodedBatch {
        self.batch(&(start..end).collect::<Vec<_>>())
    }
}

/// One mini-batch: a bag per field, optional text matrices, labels.
#[derive(Clone, Debug)]
pub struct EncodedBatch {
    pub layout_hash: String,
    pub bags: Vec<Rc<Bag>>,
    /// `[B x D]` user, item and context text vectors.
    pub text: Option<Vec<Tensor>>,
    pub labels: Vec<f32>,
}

impl EncodedBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Linear map of a frozen `[B x D]` text matrix through `projection` (`[D x d_t]`).
pub fn project_text_embedding<'t>(vecs: Var<'t>, projection: Var<'t>) -> Result<Var<'t>> {
    let (vs, ps) = (vecs.shape(), projection.shape());
    if ps.len() != 2 || vs.last() != Some(&ps[0]) {
        return Err(FeatureError::DimMismatch {
            expected: ps.first().copied().unwrap_or(0),
            got: vs.last().copied().unwrap_or(0),
        });
    }
    Ok(vecs.matmul(projection)?)
}

/// Learned embedding tables and text projections for a schema.
#[derive(Clone, Debug)]
pub struct FeatureParams {
    pub layout_hash: String,
    pub tables: Vec<ParamId>,
    pub projections: Vec<ParamId>,
}

impl FeatureParams {
    pub fn init<R: Rng>(schema: &FeatureSchema, store: &mut ParamStore, rng: &mut R) -> Self {
        let tables = schema
            .fields
            .iter()
            .map(|s| {
                let t = init::normal_with(&[s.input_size, s.dim], 0.01, rng);
                store.add(format!("emb.{}", s.name), t)
            })
            .collect();
        let projections = schema
            .text
            .iter()
            .map(|s| {
                let w = init::xavier_uniform_with(&[s.input_size, s.dim], s.input_size, s.dim, rng);
                store.add(format!("proj.{}", s.name), w)
            })
            .collect();
        FeatureParams {
            layout_hash: schema.layout_hash(),
            tables,
            projections,
        }
    }

    fn check(&self, batch: &EncodedBatch) -> Result<()> {
        if batch.layout_hash != self.layout_hash {
            return Err(FeatureError::FieldOrderMismatch {
                expected: self.layout_hash.clone(),
                found: batch.layout_hash.clone(),
            });
        }
        Ok(())
    }

    /// Per-field embeddings in layout order, each `[B x d]`.
    pub fn field_blocks<'t>(&self, tape: &'t Tape, store: &ParamStore, batch: &EncodedBatch) -> Result<Vec<Var<'t>>> {
        self.check(batch)?;
        let mut blocks = Vec::with_capacity(self.tables.len() + self.projections.len());
        for (id, bag) in self.tables.iter().zip(&batch.bags) {
            blocks.push(tape.embedding_bag(tape.param(store, *id), bag.clone())?);
        }
        if !self.projections.is_empty() {
            let text = batch.text.as_ref().ok_or(FeatureError::MissingTextEmbedding {
                kind: "text",
                count: batch.len(),
                example: "batch has no text matrices".into(),
            })?;
            for (id, m) in self.projections.iter().zip(text) {
                blocks.push(project_text_embedding(tape.constant(m.clone()), tape.param(store, *id))?);
            }
        }
        Ok(blocks)
    }

    /// The unified `[B x total_dim]` model input.
    pub fn concat_features<'t>(&self, tape: &'t Tape, store: &ParamStore, batch: &EncodedBatch) -> Result<Var<'t>> {
        let blocks = self.field_blocks(tape, store, batch)?;
        Ok(tape.concat(&blocks, 1)?)
    }
}
