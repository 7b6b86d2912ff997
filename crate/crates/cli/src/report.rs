//! Comparison table over run manifests: provider variants by models.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use textrec_core::models::ModelKind;

use crate::error::{CliError, Result};
use crate::rundir::{RunManifest, MANIFEST_FILE};

/// Row order; other provider ids follow alphabetically.
pub const VARIANTS: [&str; 5] = [
    "raw",
    "bert-base-uncased",
    "distilbert-base-uncased",
    "roberta-base",
    "roberta-large",
];

/// Every `manifest.json` named directly or found below the given paths, sorted by path.
pub fn collect_manifests(paths: &[PathBuf]) -> Result<Vec<(PathBuf, RunManifest)>> {
    fn walk(p: &Path, depth: usize, out: &mut Vec<PathBuf>) {
        if p.is_file() {
            if p.file_name().is_some_and(|n| n == MANIFEST_FILE) {
                out.push(p.to_path_buf());
            }
            return;
        }
        if depth == 0 {
            return;
        }
        if let Ok(entries) = fs::read_dir(p) {
            for e in entries.flatten() {
                walk(&e.path(), depth - 1, out);
            }
        }
    }
    let mut found = Vec::new();
    for p in paths {
        walk(p, 4, &mut found);
    }
    found.sort();
    found.dedup();
    if found.is_empty() {
        let names: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
        return Err(CliError::NoManifests(names.join(", ")));
    }
    found
        .into_iter()
        .map(|p| RunManifest::read(&p).map(|m| (p, m)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub auc: f64,
    pub logloss: f64,
    pub best_auc: bool,
    pub best_logloss: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub variants: Vec<String>,
    pub models: Vec<String>,
    cells: BTreeMap<(String, String), Cell>,
}

fn variant_rank(v: &str) -> (usize, &str) {
    (VARIANTS.iter().position(|k| *k == v).unwrap_or(VARIANTS.len()), v)
}

fn model_rank(m: &str) -> (usize, &str) {
    let pos = ModelKind::ALL.iter().position(|k| k.display_name() == m);
    (pos.unwrap_or(ModelKind::ALL.len()), m)
}

impl Report {
    /// When several manifests share a cell, the most recently finished one wins
    /// (ties go to the later path).
    pub fn build(manifests: &[(PathBuf, RunManifest)]) -> Result<Self> {
        if manifests.is_empty() {
            return Err(CliError::NoManifests("(none given)".into()));
        }
        let mut chosen: BTreeMap<(String, String), (&PathBuf, &RunManifest)> = BTreeMap::new();
        for (path, m) in manifests {
            let key = (m.provider.clone(), m.model.clone());
            let newer = match chosen.get(&key) {
                Some((p, old)) => (m.finished_unix, path) >= (old.finished_unix, *p),
                None => true,
            };
            if newer {
                chosen.insert(key, (path, m));
            }
        }
        let mut variants: Vec<String> = chosen.keys().map(|k| k.0.clone()).collect();
        variants.sort_by(|a, b| variant_rank(a).cmp(&variant_rank(b)));
        variants.dedup();
        let mut models: Vec<String> = chosen.keys().map(|k| k.1.clone()).collect();
        models.sort_by(|a, b| model_rank(a).cmp(&model_rank(b)));
        models.dedup();

        let mut cells: BTreeMap<(String, String), Cell> = chosen
            .iter()
            .map(|(k, (_, m))| {
                let cell = Cell {
                    auc: m.test.auc,
                    logloss: m.test.logloss,
                    best_auc: false,
                    best_logloss: false,
                };
                (k.clone(), cell)
            })
            .collect();
        for model in &models {
            let column: Vec<Cell> = cells.iter().filter(|(k, _)| &k.1 == model).map(|(_, c)| *c).collect();
            if column.len() < 2 {
                continue;
            }
            let top_auc = column.iter().map(|c| c.auc).fold(f64::NEG_INFINITY, f64::max);
            let low_loss = column.iter().map(|c| c.logloss).fold(f64::INFINITY, f64::min);
            for (k, c) in cells.iter_mut() {
                if &k.1 == model {
                    c.best_auc = c.auc == top_auc;
                    c.best_logloss = c.logloss == low_loss;
                }
            }
        }
        Ok(Report { variants, models, cells })
    }

    pub fn cell(&self, variant: &str, model: &str) -> Option<&Cell> {
        self.cells.get(&(variant.to_string(), model.to_string()))
    }

    /// Markdown table with best-per-column values in bold.
    pub fn markdown(&self) -> String {
        let mut s = String::from("| Variant |");
        for m in &self.models {
            write!(s, " {m} AUC | {m} Logloss |").unwrap();
        }
        s.push_str("\n| --- |");
        for _ in &self.models {
            s.push_str(" ---: | ---: |");
        }
        s.push('\n');
        for v in &self.variants {
            write!(s, "| {v} |").unwrap();
            for m in &self.models {
                match self.cell(v, m) {
                    Some(c) => {
                        let fmt = |x: f64, best: bool| if best { format!("**{x:.4}**") } else { format!("{x:.4}") };
                        write!(s, " {} | {} |", fmt(c.auc, c.best_auc), fmt(c.logloss, c.best_logloss)).unwrap();
                    }
                    None => s.push_str(" - | - |"),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("variant,model,auc,logloss,best_auc,best_logloss\n");
        for v in &self.variants {
            for m in &self.models {
                if let Some(c) = self.cell(v, m) {
                    writeln!(s, "{v},{m},{},{},{},{}", c.auc, c.logloss, c.best_auc, c.best_logloss).unwrap();
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use textrec_core::train::MetricReport;

    fn manifest(provider: &str, model: &str, auc: f64, logloss: f64, finished: u64) -> RunManifest {
        let r = MetricReport {
            auc,
            logloss,
            epoch: 1,
            seconds: 0.0,
        };
        RunManifest {
            config_hash: "000000000000".into(),
            attempt: 1,
            started_unix: 0,
            finished_unix: finished,
            artifact_version: "v0".into(),
            provider: provider.into(),
            model: model.into(),
            seed: 0,
            deterministic: true,
            input_width: 1,
            text_dim: None,
            epochs: 1,
            stopped_early: false,
            best_valid: r.clone(),
            test: r,
            files: vec![],
        }
    }

    fn set(ms: Vec<RunManifest>) -> Vec<(PathBuf, RunManifest)> {
        ms.into_iter()
            .enumerate()
            .map(|(i, m)| (PathBuf::from(format!("r{i}/manifest.json")), m))
            .collect()
    }

    #[test]
    fn single_manifest_is_one_by_one() {
        let r = Report::build(&set(vec![manifest("raw", "WideDeep", 0.8, 0.4, 1)])).unwrap();
        assert_eq!((r.variants.len(), r.models.len()), (1, 1));
        assert_eq!(
            r.markdown(),
            "| Variant | WideDeep AUC | WideDeep Logloss |\n| --- | ---: | ---: |\n| raw | 0.8000 | 0.4000 |\n"
        );
    }

    #[test]
    fn better_auc_is_flagged() {
        let r = Report::build(&set(vec![
            manifest("raw", "WideDeep", 0.80, 0.40, 1),
            manifest("bert-base-uncased", "WideDeep", 0.81, 0.42, 1),
        ]))
        .unwrap();
        let raw = r.cell("raw", "WideDeep").unwrap();
        let bert = r.cell("bert-base-uncased", "WideDeep").unwrap();
        assert!(bert.best_auc && !raw.best_auc);
        assert!(raw.best_logloss && !bert.best_logloss);
    }

    #[test]
    fn rows_and_columns_follow_the_fixed_order() {
        let r = Report::build(&set(vec![
            manifest("stub", "EulerNet", 0.7, 0.5, 1),
            manifest("roberta-large", "WideDeep", 0.7, 0.5, 1),
            manifest("raw", "xDeepFM", 0.7, 0.5, 1),
        ]))
        .unwrap();
        assert_eq!(r.variants, vec!["raw", "roberta-large", "stub"]);
        assert_eq!(r.models, vec!["WideDeep", "xDeepFM", "EulerNet"]);
        assert!(r.markdown().contains("| raw | - | - | 0.7000 | 0.5000 | - | - |"));
    }

    #[test]
    fn latest_manifest_fills_a_shared_cell() {
        let r = Report::build(&set(vec![
            manifest("raw", "WideDeep", 0.9, 0.3, 5),
            manifest("raw", "WideDeep", 0.7, 0.5, 9),
        ]))
        .unwrap();
        assert_eq!(r.cell("raw", "WideDeep").unwrap().auc, 0.7);
    }

    #[test]
    fn no_manifests_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(
            collect_manifests(&[tmp.path().to_path_buf()]),
            Err(CliError::NoManifests(_))
        ));
    }
}
