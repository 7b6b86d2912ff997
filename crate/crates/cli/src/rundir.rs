//! Advisory locks, content-addressed run directories and run manifests.

use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use textrec_core::train::MetricReport;

use crate::error::{CliError, Result};

pub const LOCK_FILE: &str = ".lock";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Exclusive advisory lock on a directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    _file: File,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        let path = dir.join(LOCK_FILE);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(CliError::io(&path))?;
        match file.try_lock() {
            Ok(()) => Ok(DirLock { _file: file }),
            Err(TryLockError::WouldBlock) => Err(CliError::Busy(dir.to_path_buf())),
            Err(TryLockError::Error(e)) => Err(CliError::Io { path, source: e }),
        }
    }
}

pub fn attempt_number(dir: &Path) -> Option<usize> {
    dir.file_name()?.to_str()?.strip_prefix("attempt-")?.parse().ok()
}

/// Creates the next free `attempt-N` under `run_root`, starting from 1.
pub fn allocate_attempt(run_root: &Path) -> Result<(usize, PathBuf)> {
    fs::create_dir_all(run_root).map_err(CliError::io(run_root))?;
    for n in 1.. {
        let dir = run_root.join(format!("attempt-{n}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((n, dir)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::Io { path: dir, source: e }),
        }
    }
    unreachable!()
}

/// Highest-numbered attempt under `run_root` that holds a manifest.
pub fn latest_attempt(run_root: &Path) -> Option<PathBuf> {
    fs::read_dir(run_root)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .filter_map(|p| attempt_number(&p).map(|n| (n, p)))
        .max_by_key(|(n, _)| *n)
        .map(|(_, p)| p)
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Run directory name.
    pub config_hash: String,
    pub attempt: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub artifact_version: String,
    /// Provider model id, or "raw".
    pub provider: String,
    pub model: String,
    pub seed: u64,
    pub deterministic: bool,
    pub input_width: usize,
    pub text_dim: Option<usize>,
    pub epochs: usize,
    pub stopped_early: bool,
    pub best_valid: MetricReport,
    pub test: MetricReport,
    /// Files of the attempt directory, relative to it.
    pub files: Vec<String>,
}

impl RunManifest {
    /// Writes `manifest.json`; an existing manifest is never replaced.
    pub fn write_new(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(CliError::io(&path))?;
        let json = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        f.write_all(json.as_bytes()).map_err(CliError::io(&path))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

pub fn artifact_version(run_hash: &str) -> String {
    format!("v{}-g{run_hash}", env!("CARGO_PKG_VERSION"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> MetricReport {
        MetricReport {
            auc: 0.8,
            logloss: 0.4,
            epoch: 2,
            seconds: 1.0,
        }
    }

    #[test]
    fn attempts_count_up_and_latest_needs_a_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("abc");
        let (n1, d1) = allocate_attempt(&root).unwrap();
        let (n2, d2) = allocate_attempt(&root).unwrap();
        assert_eq!((n1, n2), (1, 2));
        assert_eq!(latest_attempt(&root), None);
        let m = RunManifest {
            config_hash: "abc".into(),
            attempt: 1,
            started_unix: 0,
            finished_unix: 1,
            artifact_version: artifact_version("abc"),
            provider: "raw".into(),
            model: "WideDeep".into(),
            seed: 1,
            deterministic: true,
            input_width: 4,
            text_dim: None,
            epochs: 2,
            stopped_early: false,
            best_valid: report(),
            test: report(),
            files: vec![],
        };
        m.write_new(&d1).unwrap();
        assert_eq!(latest_attempt(&root), Some(d1.clone()));
        m.write_new(&d2).unwrap();
        assert_eq!(latest_attempt(&root), Some(d2));
        assert!(m.write_new(&d1).is_err());
        assert_eq!(RunManifest::read(&d1.join(MANIFEST_FILE)).unwrap(), m);
    }

    #[test]
    fn second_lock_on_a_directory_is_refused() {
        let tmp = tempfile::tempdir().unwrap();
        let first = DirLock::acquire(tmp.path()).unwrap();
        assert!(matches!(DirLock::acquire(tmp.path()), Err(CliError::Busy(_))));
        drop(first);
        DirLock::acquire(tmp.path()).unwrap();
    }
}
