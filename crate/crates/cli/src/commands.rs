//! The six verbs: prepare, verbalize, embed, train, eval, report.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use textrec_core::embed::{EmbeddingCache, EmbeddingProvider, EmbedStats};
use textrec_core::features::{EncodedSet, FeatureError, FeatureSchema, TextTable};
use textrec_core::models::Model;
use textrec_core::train::{self, write_history_csv, MetricReport};
use textrec_core::verbalize::{write_tsv, CodeMaps, EntityKind, Templates, VerbalDoc, Verbalizer};
use textrec_tensor::{checkpoint, exec, ParamStore};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::prepared::{self, Prepared};
use crate::report::{collect_manifests, Report};
use crate::rundir::{allocate_attempt, artifact_version, latest_attempt, unix_now, DirLock, RunManifest};

pub const CONFIG_FILE: &str = "config.toml";
pub const SCHEMA_FILE: &str = "schema.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SIDECAR_FILE: &str = "model.json";
pub const HISTORY_FILE: &str = "history.csv";

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) {
    // Output is best-effort; a closed stdout must not fail a finished command.
    let _ = writeln!(out, "{line}");
}

pub fn prepare(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    let o = prepared::prepare(cfg)?;
    let c = &o.stamp.counts;
    if o.up_to_date {
        say(out, format_args!("up to date: {}", o.dir.display()));
    } else {
        say(out, format_args!("prepared {}", o.dir.display()));
    }
    say(
        out,
        format_args!(
            "users {} items {} ratings {} positives {} ({:.4}); train {} valid {} test {}",
            c.users,
            c.items,
            c.ratings,
            c.positives,
            c.positives as f64 / c.ratings.max(1) as f64,
            c.train,
            c.valid,
            c.test
        ),
    );
    Ok(())
}

/// Verbalized users, items and the distinct contexts seen in the prepared examples, in key order.
pub struct Docs {
    pub users: Vec<VerbalDoc>,
    pub items: Vec<VerbalDoc>,
    pub contexts: Vec<VerbalDoc>,
}

impl Docs {
    pub fn build(p: &Prepared, verbalizer: &Verbalizer, policy: textrec_tensor::ExecPolicy) -> Docs {
        let users = exec::map_indexed(policy, p.users.len(), |i| verbalizer.user(&p.users[i]));
        let items = exec::map_indexed(policy, p.items.len(), |i| verbalizer.item(&p.items[i]));
        let distinct: BTreeMap<String, _> = p.all_examples().map(|e| (e.context.key(), e.context)).collect();
        let contexts = distinct.values().map(|c| verbalizer.context(c)).collect();
        Docs { users, items, contexts }
    }

    pub fn all(&self) -> impl Iterator<Item = &VerbalDoc> {
        self.users.iter().chain(&self.items).chain(&self.contexts)
    }
}

fn verbalizer(version: &str) -> Result<Verbalizer> {
    let templates = Templates::builtin(version).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Verbalizer::new(templates, CodeMaps::default()))
}

/// Writes `users.tsv`, `items.tsv` and `contexts.tsv` to `out_dir`, or everything to `out`.
pub fn verbalize(
    cfg: &ExperimentConfig,
    template: Option<&str>,
    out_dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    cfg.validate()?;
    let p = Prepared::load(cfg)?;
    let v = verbalizer(template.unwrap_or(&cfg.data.template_version))?;
    let docs = Docs::build(&p, &v, cfg.train.policy());
    match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(CliError::io(dir))?;
            for (name, set) in [("users", &docs.users), ("items", &docs.items), ("contexts", &docs.contexts)] {
                let path = dir.join(format!("{name}.tsv"));
                let f = File::create(&path).map_err(CliError::io(&path))?;
                write_tsv(BufWriter::new(f), set).map_err(CliError::io(&path))?;
            }
            say(
                out,
                format_args!(
                    "wrote {} users, {} items, {} contexts to {}",
                    docs.users.len(),
                    docs.items.len(),
                    docs.contexts.len(),
                    dir.display()
                ),
            );
        }
        None => {
            let all: Vec<VerbalDoc> = docs.all().cloned().collect();
            write_tsv(&mut *out, &all).map_err(CliError::io("<stdout>"))?;
        }
    }
    Ok(())
}

/// Embeds every distinct verbalized text through the configured provider.
pub fn embed(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<Option<EmbedStats>> {
    cfg.validate()?;
    if cfg.is_raw() {
        say(out, format_args!("raw mode: no text embeddings needed"));
        return Ok(None);
    }
    let p = Prepared::load(cfg)?;
    let v = verbalizer(&cfg.data.template_version)?;
    let docs = Docs::build(&p, &v, cfg.train.policy());
    let texts: Vec<String> = docs.all().map(|d| d.text.clone()).collect();
    let cache_path = cfg.cache_path();
    let cache_dir = cache_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let _lock = DirLock::acquire(&cache_dir)?;
    let mut pcfg = cfg.provider.clone();
    pcfg.cache_path = Some(cache_path.clone());
    let provider = EmbeddingProvider::from_config(pcfg)?;
    let (_, stats) = provider.embed_texts(&texts)?;
    say(
        out,
        format_args!(
            "docs {} (users {}, items {}, contexts {}); distinct texts {}; hits {} misses {}; backend calls {}",
            stats.requested,
            docs.users.len(),
            docs.items.len(),
            docs.contexts.len(),
            stats.distinct,
            stats.hits,
            stats.misses,
            stats.backend_calls
        ),
    );
    say(
        out,
        format_args!(
            "cache {} ({} vectors, dim {})",
            cache_path.display(),
            provider.cached_len(),
            provider.dim().unwrap_or(0)
        ),
    );
    Ok(Some(stats))
}

/// Text vectors keyed like `text_keys`, read from the provider's cache file.
fn text_table(cfg: &ExperimentConfig, p: &Prepared) -> Result<Arc<TextTable>> {
    let v = verbalizer(&cfg.data.template_version)?;
    let docs = Docs::build(p, &v, cfg.train.policy());
    let path = cfg.cache_path();
    let cache = if path.is_file() {
        EmbeddingCache::open(&path, &cfg.provider.model_id)?
    } else {
        EmbeddingCache::in_memory(cfg.provider.model_id.clone())
    };
    let Some(dim) = cache.dim() else {
        let first = docs.users.first().map(|d| d.entity_key.clone()).unwrap_or_default();
        return Err(FeatureError::MissingTextEmbedding {
            kind: "user",
            count: docs.users.len(),
            example: first,
        }
        .into());
    };
    let mut table = TextTable::new(dim);
    for (kind, set) in [
        (EntityKind::User, &docs.users),
        (EntityKind::Item, &docs.items),
        (EntityKind::Context, &docs.contexts),
    ] {
        let mut missing = Vec::new();
        for d in set {
            match cache.get(&d.text) {
                Some(vec) => table.insert(d.entity_key.clone(), &vec.values, cfg.features.l2_normalize_text)?,
                None => missing.push(&d.entity_key),
            }
        }
        if let Some(first) = missing.first() {
            return Err(FeatureError::MissingTextEmbedding {
                kind: kind.name(),
                count: missing.len(),
                example: first.to_string(),
            }
            .into());
        }
    }
    Ok(Arc::new(table))
}

/// Feature schema and optional text table for `cfg` over prepared data.
fn features(cfg: &ExperimentConfig, p: &Prepared) -> Result<(FeatureSchema, Option<Arc<TextTable>>)> {
    let schema = FeatureSchema::build(&cfg.features, &p.train, &p.catalog())?;
    if cfg.is_raw() {
        return Ok((schema, None));
    }
    let table = text_table(cfg, p)?;
    let schema = schema.enriched(table.dim(), cfg.features.text_dim);
    Ok((schema, Some(table)))
}

pub struct TrainResult {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("serializes") + "\n";
    fs::write(path, json).map_err(CliError::io(path))
}

pub fn train(cfg: &ExperimentConfig, out: &mut dyn Write, progress: &mut dyn Write) -> Result<TrainResult> {
    cfg.validate()?;
    let started = unix_now();
    let p = Prepared::load(cfg)?;
    let (schema, table) = features(cfg, &p)?;
    let catalog = p.catalog();
    let train_set = EncodedSet::encode(&schema, &p.train, &catalog, table.clone())?;
    let valid_set = EncodedSet::encode(&schema, &p.valid, &catalog, table.clone())?;
    let test_set = EncodedSet::encode(&schema, &p.test, &catalog, table)?;

    let run_hash = cfg.run_hash(&p.stamp.fingerprint());
    let run_root = cfg.data.runs_dir.join(&run_hash);
    let _lock = DirLock::acquire(&run_root)?;
    let (attempt, dir) = allocate_attempt(&run_root)?;
    say(out, format_args!("run {}", dir.display()));
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml()).map_err(CliError::io(dir.join(CONFIG_FILE)))?;
    schema.save(&dir.join(SCHEMA_FILE))?;

    let mut store = ParamStore::new();
    let model = Model::new(&cfg.model, &schema, &mut store, cfg.train.seed)?;
    let outcome = train::train(&model, &mut store, &train_set, &valid_set, &cfg.train, |r| {
        let _ = writeln!(
            progress,
            "epoch {:>3}  train_logloss {:.6}  valid_auc {:.6}  valid_logloss {:.6}  {:.1}s",
            r.epoch, r.train_logloss, r.valid_auc, r.valid_logloss, r.seconds
        );
    })?;

    let history_path = dir.join(HISTORY_FILE);
    let f = File::create(&history_path).map_err(CliError::io(&history_path))?;
    write_history_csv(BufWriter::new(f), &outcome.history).map_err(CliError::io(&history_path))?;
    checkpoint::save(&store, &dir.join(CHECKPOINT_FILE))?;
    write_json(
        &dir.join(SIDECAR_FILE),
        &serde_json::json!({
            "model": cfg.model,
            "layout_hash": schema.layout_hash(),
            "input_width": model.input_dim(),
            "schema": SCHEMA_FILE,
            "checkpoint": CHECKPOINT_FILE,
        }),
    )?;

    let test = train::evaluate(&model, &store, &test_set, cfg.train.batch_size, cfg.train.policy())?;
    let manifest = RunManifest {
        config_hash: run_hash.clone(),
        attempt,
        started_unix: started,
        finished_unix: unix_now(),
        artifact_version: artifact_version(&run_hash),
        provider: cfg.variant().to_string(),
        model: cfg.model.kind.display_name().to_string(),
        seed: cfg.train.seed,
        deterministic: cfg.train.deterministic,
        input_width: model.input_dim(),
        text_dim: schema.is_enriched().then_some(cfg.features.text_dim),
        epochs: outcome.history.len(),
        stopped_early: outcome.stopped_early,
        best_valid: outcome.best,
        test: MetricReport { epoch: 0, ..test },
        files: [CONFIG_FILE, SCHEMA_FILE, HISTORY_FILE, CHECKPOINT_FILE, SIDECAR_FILE]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    };
    manifest.write_new(&dir)?;
    say(
        out,
        format_args!(
            "test auc {:.6} logloss {:.6} (best valid epoch {})",
            manifest.test.auc, manifest.test.logloss, manifest.best_valid.epoch
        ),
    );
    Ok(TrainResult { dir, manifest })
}

/// Re-scores the test split with a finished run's checkpoint.
pub fn eval(cfg: &ExperimentConfig, run: Option<&Path>, out: &mut dyn Write) -> Result<MetricReport> {
    let dir = match run {
        Some(d) => d.to_path_buf(),
        None => {
            cfg.validate()?;
            let p = Prepared::load(cfg)?;
            let root = cfg.data.runs_dir.join(cfg.run_hash(&p.stamp.fingerprint()));
            latest_attempt(&root).ok_or_else(|| {
                CliError::Data(format!("no finished run under {}; run `textrec train` first", root.display()))
            })?
        }
    };
    let cfg_path = dir.join(CONFIG_FILE);
    let mut run_cfg = ExperimentConfig::load(&cfg_path)?;
    run_cfg.provider.endpoint = cfg.provider.endpoint.clone().or(run_cfg.provider.endpoint);
    run_cfg.train.deterministic |= cfg.train.deterministic;
    let p = Prepared::load(&run_cfg)?;
    let schema = FeatureSchema::load(&dir.join(SCHEMA_FILE))?;
    let table = if schema.is_enriched() {
        Some(text_table(&run_cfg, &p)?)
    } else {
        None
    };
    let test_set = EncodedSet::encode(&schema, &p.test, &p.catalog(), table)?;
    let mut store = ParamStore::new();
    let model = Model::new(&run_cfg.model, &schema, &mut store, run_cfg.train.seed)?;
    store.load_named(checkpoint::load(&dir.join(CHECKPOINT_FILE))?)?;
    let report = train::evaluate(&model, &store, &test_set, run_cfg.train.batch_size, run_cfg.train.policy())?;
    say(
        out,
        format_args!(
            "{}",
            serde_json::json!({
                "run": dir.display().to_string(),
                "split": "test",
                "examples": test_set.len(),
                "auc": report.auc,
                "logloss": report.logloss,
            })
        ),
    );
    Ok(report)
}

/// Renders the comparison table; with `out_dir`, also writes `report.md` and `report.csv`.
pub fn report(paths: &[PathBuf], out_dir: Option<&Path>, out: &mut dyn Write) -> Result<Report> {
    let manifests = collect_manifests(paths)?;
    let report = Report::build(&manifests)?;
    let md = report.markdown();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        fs::write(dir.join("report.md"), &md).map_err(CliError::io(dir.join("report.md")))?;
        fs::write(dir.join("report.csv"), report.csv()).map_err(CliError::io(dir.join("report.csv")))?;
    }
    let _ = out.write_all(md.as_bytes());
    Ok(report)
}
