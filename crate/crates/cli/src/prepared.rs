//! Normalized dataset on disk: entity tables, labeled splits and vocabularies.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use textrec_core::data::{
    read_examples, read_items, read_users, split_dataset, write_examples, write_items, write_users, LabeledExample, Ml1m,
    RawItem, RawUser,
};
use textrec_core::features::{Catalog, FeatureSchema};

use crate::config::{short_hash, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::rundir::DirLock;

pub const INPUT_FILES: [&str; 3] = ["users.dat", "movies.dat", "ratings.dat"];
pub const STAMP_FILE: &str = "prepare.json";
pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareCounts {
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    pub positives: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Written last; its presence marks a complete prepared directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub key: Value,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    pub counts: PrepareCounts,
}

impl Stamp {
    /// Identifies the prepared data inside run hashes.
    pub fn fingerprint(&self) -> String {
        short_hash(&serde_json::to_string(self).expect("stamp serializes"))
    }
}

pub fn prepared_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.data.work_dir.join("prepared").join(cfg.prepare_hash())
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(CliError::io(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(CliError::io(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn read_stamp(dir: &Path) -> Option<Stamp> {
    let text = fs::read_to_string(dir.join(STAMP_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(CliError::io(path))?))
}

#[derive(Clone, Debug)]
pub struct PrepareOutcome {
    pub dir: PathBuf,
    pub up_to_date: bool,
    pub stamp: Stamp,
}

/// Parses, labels and splits ML-1M; does nothing when the inputs and settings are unchanged.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PrepareOutcome> {
    let src = &cfg.data.ml1m_dir;
    let mut inputs = BTreeMap::new();
    for name in INPUT_FILES {
        let path = src.join(name);
        if !path.is_file() {
            return Err(CliError::Data(format!("missing input file {}", path.display())));
        }
        inputs.insert(name.to_string(), sha256_file(&path)?);
    }
    let dir = prepared_dir(cfg);
    let _lock = DirLock::acquire(&dir)?;
    let key = cfg.prepare_key();
    if let Some(stamp) = read_stamp(&dir) {
        if stamp.key == key && stamp.inputs == inputs {
            return Ok(PrepareOutcome {
                dir,
                up_to_date: true,
                stamp,
            });
        }
    }
    let _ = fs::remove_file(dir.join(STAMP_FILE));

    let ml = Ml1m::load(src)?;
    let examples = ml.labeled(cfg.data.threshold)?;
    let positives = examples.iter().filter(|e| e.label == 1).count();
    let [tr, va, te] = cfg.data.split;
    let split = split_dataset(examples, (tr, va, te), cfg.data.split_seed)?;

    let path = dir.join("users.tsv");
    write_users(create(&path)?, &ml.users).map_err(CliError::io(&path))?;
    let path = dir.join("items.tsv");
    write_items(create(&path)?, &ml.items).map_err(CliError::io(&path))?;
    for (name, rows) in SPLITS.iter().zip([&split.train, &split.valid, &split.test]) {
        let path = dir.join(format!("{name}.tsv"));
        write_examples(create(&path)?, rows).map_err(CliError::io(&path))?;
    }
    let catalog = Catalog::new(&ml.users, &ml.items);
    let schema = FeatureSchema::build(&cfg.features, &split.train, &catalog)?;
    schema.save(&dir.join("vocab.json"))?;

    let stamp = Stamp {
        key,
        inputs,
        counts: PrepareCounts {
            users: ml.users.len(),
            items: ml.items.len(),
            ratings: ml.ratings.len(),
            positives,
            train: split.train.len(),
            valid: split.valid.len(),
            test: split.test.len(),
        },
    };
    let path = dir.join(STAMP_FILE);
    let json = serde_json::to_string_pretty(&stamp).expect("stamp serializes") + "\n";
    fs::write(&path, json).map_err(CliError::io(&path))?;
    Ok(PrepareOutcome {
        dir,
        up_to_date: false,
        stamp,
    })
}

/// A prepared directory read back into memory.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dir: PathBuf,
    pub stamp: Stamp,
    pub users: Vec<RawUser>,
    pub items: Vec<RawItem>,
    pub train: Vec<LabeledExample>,
    pub valid: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl Prepared {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let dir = prepared_dir(cfg);
        let stamp = read_stamp(&dir).ok_or_else(|| CliError::NotPrepared(dir.join(STAMP_FILE)))?;
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(CliError::io(&path))
        };
        let users = read_users(&read("users.tsv")?)?;
        let items = read_items(&read("items.tsv")?)?;
        let mut splits = Vec::new();
        for name in SPLITS {
            let path = dir.join(format!("{name}.tsv"));
            let f = File::open(&path).map_err(CliError::io(&path))?;
            splits.push(read_examples(BufReader::new(f))?);
        }
        let test = splits.pop().expect("three splits");
        let valid = splits.pop().expect("three splits");
        let train = splits.pop().expect("three splits");
        Ok(Prepared {
            dir,
            stamp,
            users,
            items,
            train,
            valid,
            test,
        })
    }

    pub fn catalog(&self) -> Catalog {
        Catalog::new(&self.users, &self.items)
    }

    pub fn all_examples(&self) -> impl Iterator<Item = &LabeledExample> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}
