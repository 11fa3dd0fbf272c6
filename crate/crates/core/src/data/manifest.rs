use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mrm_tensor::io;
use serde::{Deserialize, Serialize};

use super::preprocess::{preprocess_record, TARGET_FS};
use super::{Dataset, EcgRecord, NUM_FOLDS, NUM_LEADS};
use crate::error::{config_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    All,
    Diag,
    SubDiag,
    SupDiag,
    Form,
    Rhythm,
    Cpsc,
    /// Generated data; any vocabulary size.
    Synthetic,
}

impl Task {
    pub const ALL: [Task; 8] = [
        Task::All,
        Task::Diag,
        Task::SubDiag,
        Task::SupDiag,
        Task::Form,
        Task::Rhythm,
        Task::Cpsc,
        Task::Synthetic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::All => "all",
            Task::Diag => "diag",
            Task::SubDiag => "sub-diag",
            Task::SupDiag => "sup-diag",
            Task::Form => "form",
            Task::Rhythm => "rhythm",
            Task::Cpsc => "cpsc",
            Task::Synthetic => "synthetic",
        }
    }

    /// Vocabulary size the task implies.
    pub fn vocabulary_size(self) -> Option<usize> {
        match self {
            Task::All => Some(71),
            Task::Diag => Some(44),
            Task::SubDiag => Some(24),
            Task::SupDiag => Some(5),
            Task::Form => Some(19),
            Task::Rhythm => Some(12),
            Task::Cpsc => Some(9),
            Task::Synthetic => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| config_err(format!("unknown task `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub labels: Vec<String>,
    pub fold: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub records: Vec<ManifestEntry>,
    pub vocabulary: Vec<String>,
    pub task: Task,
    pub sampling_rate_hz: u32,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// Checks that need no signal files.
    fn check(&self, problems: &mut Vec<String>) {
        if let Some(k) = self.task.vocabulary_size() {
            if self.vocabulary.len() != k {
                problems.push(format!(
                    "task {} has {k} labels but the vocabulary lists {}",
                    self.task,
                    self.vocabulary.len()
                ));
            }
        }
        if self.vocabulary.is_empty() {
            problems.push("vocabulary is empty".into());
        }
        let mut seen = HashSet::new();
        for code in &self.vocabulary {
            if !seen.insert(code) {
                problems.push(format!("vocabulary lists `{code}` twice"));
            }
        }
        if f64::from(self.sampling_rate_hz) < TARGET_FS {
            problems.push(format!("sampling_rate_hz {} is below {TARGET_FS} Hz", self.sampling_rate_hz));
        }
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(&r.id) {
                problems.push(format!("record {}: duplicate id", r.id));
            }
            if !(1..=NUM_FOLDS).contains(&r.fold) {
                problems.push(format!("record {}: fold {} outside 1..={NUM_FOLDS}", r.id, r.fold));
            }
            for code in &r.labels {
                if !self.vocabulary.contains(code) {
                    problems.push(format!("record {}: unknown label code `{code}`", r.id));
                }
            }
        }
    }
}

/// Reads a manifest and every signal it names, resampling each to 100 Hz and
/// `length` samples. All validation problems are collected into one
/// [`Error::Validation`].
pub fn load_dataset(manifest_path: impl AsRef<Path>, length: usize) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let m = Manifest::read(manifest_path)?;
    let mut problems = Vec::new();
    m.check(&mut problems);
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let code_index: HashMap<&str, usize> = m.vocabulary.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let fs_raw = f64::from(m.sampling_rate_hz);

    let mut records = Vec::with_capacity(m.records.len());
    for entry in &m.records {
        let path = base.join(&entry.path);
        let raw = match io::load::<f32>(&path) {
            Ok(t) => t,
            Err(e) => {
                problems.push(format!("record {}: {}: {e}", entry.id, path.display()));
                continue;
            }
        };
        if raw.rank() != 2 || raw.dim(0) != NUM_LEADS || raw.dim(1) < 2 {
            problems.push(format!(
                "record {}: signal shape {:?}, expected [{NUM_LEADS}, L] with L >= 2",
                entry.id,
                raw.shape()
            ));
            continue;
        }
        if !raw.is_finite() {
            problems.push(format!("record {}: signal has non-finite samples", entry.id));
            continue;
        }
        if fs_raw < TARGET_FS {
            continue;
        }
        let signal = match preprocess_record(&raw, fs_raw, length) {
            Ok(s) => s,
            Err(e) => {
                problems.push(format!("record {}: {e}", entry.id));
                continue;
            }
        };
        let mut labels = vec![0.0; m.vocabulary.len()];
        for code in &entry.labels {
            if let Some(&i) = code_index.get(code.as_str()) {
                labels[i] = 1.0;
            }
        }
        records.push(EcgRecord {
            id: entry.id.clone(),
            signal,
            labels,
            fold: entry.fold,
        });
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    log::info!(
        "loaded {} records ({} task, {} labels) from {}",
        records.len(),
        m.task,
        m.vocabulary.len(),
        manifest_path.display()
    );
    Ok(Dataset {
        task: m.task,
        vocabulary: m.vocabulary,
        records,
    })
}

/// Writes one MRMT file per record under `dir/signals` and `dir/manifest.json`
/// at 100 Hz. Returns the manifest path.
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let signals = dir.join("signals");
    fs::create_dir_all(&signals).map_err(|e| Error::io(&signals, e))?;
    let mut entries = Vec::with_capacity(ds.len());
    for r in &ds.records {
        let rel = PathBuf::from("signals").join(format!("{}.mrmt", r.id));
        io::save(dir.join(&rel), &r.signal)?;
        entries.push(ManifestEntry {
            id: r.id.clone(),
            path: rel,
            labels: r.codes(&ds.vocabulary).into_iter().map(String::from).collect(),
            fold: r.fold,
        });
    }
    let manifest = Manifest {
        records: entries,
        vocabulary: ds.vocabulary.clone(),
        task: ds.task,
        sampling_rate_hz: TARGET_FS as u32,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
