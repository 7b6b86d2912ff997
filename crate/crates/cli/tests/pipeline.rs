use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use textrec_cli::rundir::RunManifest;
use textrec_core::synth::{SynthConfig, SynthCorpus};

const BIN: &str = env!("CARGO_BIN_EXE_textrec");

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    /// Synthetic ML-1M files plus a small config; `extra` is appended to the TOML.
    fn new(extra: &str) -> Workspace {
        let dir = tempfile::tempdir().unwrap();
        let corpus = SynthCorpus::generate(&SynthConfig {
            users: 60,
            items: 50,
            ratings_per_user: 20,
            seed: 3,
        });
        corpus.write_ml1m(&dir.path().join("ml1m")).unwrap();
        let ws = Workspace { dir };
        ws.write_config(extra);
        ws
    }

    fn write_config(&self, extra: &str) {
        let base = "[data]\nml1m_dir = \"ml1m\"\n\n\
                    [features]\nembed_dim = 4\ntext_dim = 4\n\n\
                    [model]\nmlp = [8]\n\n\
                    [train]\nbatch_size = 256\nmax_epochs = 3\npatience = 2\nlearning_rate = 0.01\n";
        fs::write(self.path().join("exp.toml"), merge(base, extra)).unwrap();
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn run(&self, args: &[&str]) -> Output {
        let cfg = self.path().join("exp.toml");
        Command::new(BIN)
            .arg("--config")
            .arg(&cfg)
            .args(args)
            .env_remove("TEXTREC_EMBED_ENDPOINT")
            .env_remove("TEXTREC_EMBED_CACHE")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn manifests(&self) -> Vec<(PathBuf, RunManifest)> {
        textrec_cli::report::collect_manifests(&[self.path().join("runs")]).unwrap()
    }
}

/// Appends `extra` TOML, letting its tables override keys of the base tables.
fn merge(base: &str, extra: &str) -> String {
    let mut doc: toml::Table = toml::from_str(base).unwrap();
    let add: toml::Table = toml::from_str(extra).unwrap();
    for (k, v) in add {
        match (doc.get_mut(&k), v) {
            (Some(toml::Value::Table(t)), toml::Value::Table(extra)) => t.extend(extra),
            (_, v) => {
                doc.insert(k, v);
            }
        }
    }
    toml::to_string(&doc).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .flatten()
        .filter(|e| e.file_name() != ".lock")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect()
}

fn prepared_dir(ws: &Workspace) -> PathBuf {
    let root = ws.path().join("work/prepared");
    let mut dirs: Vec<PathBuf> = fs::read_dir(&root).unwrap().flatten().map(|e| e.path()).collect();
    assert_eq!(dirs.len(), 1);
    dirs.pop().unwrap()
}

#[test]
fn prepare_is_idempotent_and_counts_positives() {
    let ws = Workspace::new("");
    let first = ws.ok(&["prepare"]);
    assert!(first.starts_with("prepared "), "{first}");
    let dir = prepared_dir(&ws);
    let before = dir_bytes(&dir);
    let second = ws.ok(&["prepare"]);
    assert!(second.starts_with("up to date"), "{second}");
    assert_eq!(dir_bytes(&dir), before);

    let ratings = fs::read_to_string(ws.path().join("ml1m/ratings.dat")).unwrap();
    let total = ratings.lines().count();
    let at_least_4 = ratings
        .lines()
        .filter(|l| l.split("::").nth(2).unwrap().parse::<u8>().unwrap() >= 4)
        .count();
    let stamp: serde_json::Value = serde_json::from_slice(&before["prepare.json"]).unwrap();
    assert_eq!(stamp["counts"]["ratings"], total);
    assert_eq!(stamp["counts"]["positives"], at_least_4);
    let split_rows: usize = ["train.tsv", "valid.tsv", "test.tsv"]
        .iter()
        .map(|f| String::from_utf8_lossy(&before[*f]).lines().count() - 1)
        .sum();
    assert_eq!(split_rows, total);
}

#[test]
fn missing_ratings_file_is_a_data_error_naming_the_path() {
    let ws = Workspace::new("");
    fs::remove_file(ws.path().join("ml1m/ratings.dat")).unwrap();
    let out = ws.run(&["prepare"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("ratings.dat"), "{}", stderr(&out));
}

#[test]
fn config_errors_exit_with_2() {
    let ws = Workspace::new("");
    fs::write(ws.path().join("exp.toml"), "[train]\nbatchsize = 3\n").unwrap();
    assert_eq!(code(&ws.run(&["prepare"])), 2);
    ws.write_config("[data]\nsplit = [0.5, 0.5, 0.5]\n");
    assert_eq!(code(&ws.run(&["prepare"])), 2);
    ws.write_config("[model]\nkind = \"xdeepfm\"\n[features]\ntext_dim = 6\n[provider]\nmodel_id = \"stub\"\nbackend = \"stub\"\n");
    ws.ok(&["prepare"]);
    ws.ok(&["embed"]);
    let out = ws.run(&["train"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn train_refuses_to_run_before_prepare() {
    let ws = Workspace::new("");
    let out = ws.run(&["train"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("textrec prepare"), "{}", stderr(&out));
    assert!(!ws.path().join("runs").exists());
}

#[test]
fn raw_runs_are_reproducible_and_never_touch_the_provider() {
    // The endpoint is unreachable; raw mode must not care.
    let ws = Workspace::new("[provider]\nmodel_id = \"raw\"\nbackend = \"service\"\nendpoint = \"http://127.0.0.1:9\"\n");
    ws.ok(&["prepare"]);
    ws.ok(&["--deterministic", "train"]);
    ws.ok(&["train", "--deterministic"]);
    let ms = ws.manifests();
    assert_eq!(ms.len(), 2);
    let (p1, m1) = &ms[0];
    let (p2, m2) = &ms[1];
    assert!(p1.ends_with("attempt-1/manifest.json") && p2.ends_with("attempt-2/manifest.json"));
    assert_eq!(p1.parent().unwrap().parent(), p2.parent().unwrap().parent());
    assert_eq!(m1.provider, "raw");
    assert_eq!(m1.text_dim, None);
    assert!((m1.test.auc - m2.test.auc).abs() <= 1e-9);
    assert!((m1.test.logloss - m2.test.logloss).abs() <= 1e-9);
    let attempt = p2.parent().unwrap();
    for f in &m2.files {
        assert!(attempt.join(f).is_file(), "{f}");
    }
    let history = fs::read_to_string(attempt.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), m2.epochs + 1);

    let eval: serde_json::Value = serde_json::from_str(ws.ok(&["--deterministic", "eval"]).trim()).unwrap();
    assert_eq!(eval["auc"].as_f64().unwrap(), m2.test.auc);
    assert_eq!(eval["logloss"].as_f64().unwrap(), m2.test.logloss);
    let again: serde_json::Value =
        serde_json::from_str(ws.ok(&["eval", "--run", attempt.to_str().unwrap()]).trim()).unwrap();
    assert_eq!(again["auc"], eval["auc"]);

    ws.ok(&["--seed", "7", "train"]);
    let roots: HashSet<PathBuf> = ws
        .manifests()
        .iter()
        .map(|(p, _)| p.parent().unwrap().parent().unwrap().to_path_buf())
        .collect();
    assert_eq!(roots.len(), 2);
}

#[test]
fn enriched_pipeline_embeds_once_and_widens_the_input() {
    let ws = Workspace::new("[provider]\nmodel_id = \"stub\"\nbackend = \"stub\"\nstub_dim = 12\n");
    ws.ok(&["prepare"]);
    let out = ws.run(&["train"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("textrec embed"), "{}", stderr(&out));

    // Oracle: distinct texts in the verbalize dump.
    let dump = ws.ok(&["verbalize"]);
    let texts: HashSet<&str> = dump.lines().map(|l| l.split_once('\t').unwrap().1).collect();
    let first = ws.ok(&["embed"]);
    assert!(
        first.contains(&format!("distinct texts {}; hits 0 misses {}", texts.len(), texts.len())),
        "{first}"
    );
    let second = ws.ok(&["embed"]);
    assert!(
        second.contains(&format!("hits {} misses 0; backend calls 0", texts.len())),
        "{second}"
    );

    ws.ok(&["train"]);
    let enriched = ws.manifests().pop().unwrap().1;
    assert_eq!(enriched.provider, "stub");
    assert_eq!(enriched.text_dim, Some(4));
    ws.write_config("");
    ws.ok(&["train"]);
    let all = ws.manifests();
    let raw = all.iter().find(|(_, m)| m.provider == "raw").unwrap();
    assert_eq!(enriched.input_width, raw.1.input_width + 3 * 4);

    let out_dir = ws.path().join("report");
    let md = ws.ok(&["report", "--out", out_dir.to_str().unwrap()]);
    assert!(md.contains("| raw |") && md.contains("| stub |"), "{md}");
    assert_eq!(fs::read_to_string(out_dir.join("report.md")).unwrap(), md);
    assert_eq!(fs::read_to_string(out_dir.join("report.csv")).unwrap().lines().count(), 3);
}

#[test]
fn report_on_reference_manifests_matches_golden() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixtures().join("report");
    let out = Command::new(BIN)
        .arg("report")
        .arg(&fx)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let golden_md = fs::read_to_string(fx.join("golden.md")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), golden_md);
    assert_eq!(fs::read_to_string(tmp.path().join("report.md")).unwrap(), golden_md);
    assert_eq!(
        fs::read_to_string(tmp.path().join("report.csv")).unwrap(),
        fs::read_to_string(fx.join("golden.csv")).unwrap()
    );
}

#[test]
fn report_without_manifests_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(BIN).arg("report").arg(tmp.path()).output().unwrap();
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("no run manifests"));
}

#[test]
fn verbalize_dump_matches_golden_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let golden = fixtures().join("golden");
    let cfg = tmp.path().join("g.toml");
    fs::write(
        &cfg,
        format!("[data]\nml1m_dir = {:?}\n", golden.join("ml1m").to_str().unwrap()),
    )
    .unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(BIN).arg("--config").arg(&cfg).args(args).output().unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
    };
    run(&["prepare"]);
    let out_dir = tmp.path().join("verbal");
    run(&["verbalize", "--out", out_dir.to_str().unwrap()]);
    for f in ["users.tsv", "items.tsv", "contexts.tsv"] {
        assert_eq!(fs::read(out_dir.join(f)).unwrap(), fs::read(golden.join(f)).unwrap(), "{f}");
    }
}
