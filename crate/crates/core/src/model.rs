//! Domain types shared by every stage: property kinds, dataset manifests and
//! protocol resolution.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};

/// The intrinsic image property a map, feature vector or score refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyKind {
    Depth,
    Illuminant,
    Saliency,
}

impl PropertyKind {
    /// Fixed (D, I, S) order used by the probability feature vector.
    pub const ALL: [PropertyKind; 3] = [
        PropertyKind::Depth,
        PropertyKind::Illuminant,
        PropertyKind::Saliency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PropertyKind::Depth => "depth",
            PropertyKind::Illuminant => "illuminant",
            PropertyKind::Saliency => "saliency",
        }
    }

    pub fn index(self) -> usize {
        match self {
            PropertyKind::Depth => 0,
            PropertyKind::Illuminant => 1,
            PropertyKind::Saliency => 2,
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for PropertyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide,
    Attack,
}

impl Label {
    /// Attack is the positive class everywhere.
    pub fn sign(self) -> f64 {
        match self {
            Label::Attack => 1.0,
            Label::Bonafide => -1.0,
        }
    }

    pub fn from_sign(s: f64) -> Self {
        if s > 0.0 {
            Label::Attack
        } else {
            Label::Bonafide
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
    Enroll,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Enroll => "enroll",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub media_path: PathBuf,
    pub label: Label,
    pub attack_type: Option<String>,
    pub subject_id: String,
    pub split: Split,
    pub dataset_name: String,
    pub landmarks_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub records: Vec<SampleRecord>,
    pub fps_native: Option<f64>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> Vec<&SampleRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.records.iter().any(|r| r.split == split)
    }

    /// Checks the manifest invariants: non-empty, unique ids and
    /// attack_type present exactly for attacks.
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(PadError::EmptyManifest(self.dataset_name.clone()));
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.sample_id.as_str()) {
                return Err(PadError::DuplicateSampleId(r.sample_id.clone()));
            }
            if r.attack_type.is_some() != (r.label == Label::Attack) {
                return Err(PadError::AttackTypeMismatch {
                    sample_id: r.sample_id.clone(),
                });
            }
        }
        Ok(())
    }

    /// Writes the manifest as JSON Lines. Paths are written as stored.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).map_err(|e| PadError::Internal(e.to_string()))?);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| PadError::io(path, e))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ManifestOptions {
    /// Reject unknown keys and records whose media file is missing.
    pub strict: bool,
    pub fps_native: Option<f64>,
}

const MANIFEST_KEYS: [&str; 8] = [
    "sample_id",
    "media_path",
    "label",
    "attack_type",
    "subject_id",
    "split",
    "dataset_name",
    "landmarks_path",
];

/// Loads a JSON Lines manifest. Relative media and landmark paths are
/// resolved against the manifest's directory.
pub fn load_manifest(path: &Path, opts: &ManifestOptions) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| PadError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let parse_err = |line: usize, message: String| PadError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err(lineno, "expected a JSON object".into()))?;
        if opts.strict {
            if let Some(k) = obj.keys().find(|k| !MANIFEST_KEYS.contains(&k.as_str())) {
                return Err(parse_err(lineno, format!("unknown key {k:?}")));
            }
        }
        let mut rec: SampleRecord =
            serde_json::from_value(value).map_err(|e| parse_err(lineno, e.to_string()))?;
        if rec.media_path.is_relative() {
            rec.media_path = base.join(&rec.media_path);
        }
        if let Some(lm) = rec.landmarks_path.as_mut() {
            if lm.is_relative() {
                *lm = base.join(&*lm);
            }
        }
        if opts.strict && !rec.media_path.exists() {
            return Err(PadError::MissingMedia {
                sample_id: rec.sample_id,
                path: rec.media_path,
            });
        }
        records.push(rec);
    }

    let dataset_name = records
        .first()
        .map(|r| r.dataset_name.clone())
        .unwrap_or_else(|| path.display().to_string());
    let manifest = DatasetManifest {
        dataset_name,
        records,
        fps_native: opts.fps_native,
    };
    manifest.validate()?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolMode {
    Intra,
    Inter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DevSource {
    DevSplit,
    Kfold { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub mode: ProtocolMode,
    pub train_datasets: Vec<String>,
    pub test_dataset: String,
    pub dev_source: DevSource,
    #[serde(default = "default_train_split")]
    pub train_split: Split,
    #[serde(default = "default_test_split")]
    pub test_split: Split,
}

fn default_train_split() -> Split {
    Split::Train
}

fn default_test_split() -> Split {
    Split::Test
}

impl ProtocolSpec {
    pub fn intra(dataset: &str, dev_source: DevSource) -> Self {
        ProtocolSpec {
            mode: ProtocolMode::Intra,
            train_datasets: vec![dataset.to_string()],
            test_dataset: dataset.to_string(),
            dev_source,
            train_split: Split::Train,
            test_split: Split::Test,
        }
    }

    pub fn inter(train: &[&str], test: &str, dev_source: DevSource) -> Self {
        ProtocolSpec {
            mode: ProtocolMode::Inter,
            train_datasets: train.iter().map(|s| s.to_string()).collect(),
            test_dataset: test.to_string(),
            dev_source,
            train_split: Split::Train,
            test_split: Split::Test,
        }
    }

    pub fn summary(&self) -> String {
        let mode = match self.mode {
            ProtocolMode::Intra => "intra",
            ProtocolMode::Inter => "inter",
        };
        let dev = match self.dev_source {
            DevSource::DevSplit => "dev_split".to_string(),
            DevSource::Kfold { k } => format!("kfold({k})"),
        };
        format!(
            "{mode}: train={} test={} dev={dev}",
            self.train_datasets.join("+"),
            self.test_dataset
        )
    }
}

/// Record lists produced by [`resolve_protocol`].
#[derive(Debug, Clone)]
pub struct ResolvedProtocol {
    pub train: Vec<SampleRecord>,
    pub dev: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
    /// Fold index per train record when dev scores come from k-fold
    /// cross-validation; `None` for a dedicated dev split.
    pub folds: Option<Vec<usize>>,
    pub seed: u64,
}

impl ResolvedProtocol {
    pub fn fold_count(&self) -> usize {
        self.folds
            .as_ref()
            .map(|f| f.iter().copied().max().map_or(0, |m| m + 1))
            .unwrap_or(0)
    }
}

pub fn resolve_protocol(
    spec: &ProtocolSpec,
    manifests: &[DatasetManifest],
    seed: u64,
) -> Result<ResolvedProtocol> {
    let find = |name: &str| {
        manifests
            .iter()
            .find(|m| m.dataset_name == name)
            .ok_or_else(|| PadError::Protocol(format!("no manifest for dataset {name:?}")))
    };
    if spec.train_datasets.is_empty() {
        return Err(PadError::Protocol("no train dataset".into()));
    }
    match spec.mode {
        ProtocolMode::Intra => {
            if spec.train_datasets.len() != 1 || spec.train_datasets[0] != spec.test_dataset {
                return Err(PadError::Protocol(
                    "intra mode requires train and test from the same dataset".into(),
                ));
            }
            if spec.train_split == spec.test_split {
                return Err(PadError::Protocol(format!(
                    "intra mode: train and test both use the {} split",
                    spec.train_split
                )));
            }
        }
        ProtocolMode::Inter => {
            if spec.train_datasets.contains(&spec.test_dataset) {
                return Err(PadError::Protocol(format!(
                    "inter mode: test dataset {:?} is also a train dataset",
                    spec.test_dataset
                )));
            }
        }
    }

    let take = |m: &DatasetManifest, split: Split| -> Result<Vec<SampleRecord>> {
        if !m.has_split(split) {
            return Err(PadError::MissingSplit {
                dataset: m.dataset_name.clone(),
                split: split.to_string(),
            });
        }
        Ok(m.split(split).into_iter().cloned().collect())
    };

    let mut train = Vec::new();
    let mut dev = Vec::new();
    for name in &spec.train_datasets {
        let m = find(name)?;
        train.extend(take(m, spec.train_split)?);
        if spec.dev_source == DevSource::DevSplit {
            dev.extend(take(m, Split::Dev)?);
        }
    }
    let test = take(find(&spec.test_dataset)?, spec.test_split)?;

    check_disjoint(&[("train", &train), ("dev", &dev), ("test", &test)])?;

    let folds = match spec.dev_source {
        DevSource::DevSplit => None,
        DevSource::Kfold { k } => Some(subject_folds(&train, k, seed)?),
    };
    Ok(ResolvedProtocol {
        train,
        dev,
        test,
        folds,
        seed,
    })
}

fn check_disjoint(lists: &[(&str, &Vec<SampleRecord>)]) -> Result<()> {
    for (i, (na, a)) in lists.iter().enumerate() {
        let ids: HashSet<&str> = a.iter().map(|r| r.sample_id.as_str()).collect();
        for (nb, b) in &lists[i + 1..] {
            if let Some(r) = b.iter().find(|r| ids.contains(r.sample_id.as_str())) {
                return Err(PadError::Protocol(format!(
                    "sample {:?} appears in both {na} and {nb}",
                    r.sample_id
                )));
            }
        }
    }
    Ok(())
}

/// Assigns every record to one of `k` folds so that all records of a
/// subject share a fold. Subjects are keyed by (dataset, subject_id),
/// shuffled with a seeded ChaCha8 stream and dealt round-robin.
pub fn subject_folds(records: &[SampleRecord], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(PadError::Protocol(format!("kfold needs k >= 2, got {k}")));
    }
    let mut subjects: Vec<(&str, &str)> = records
        .iter()
        .map(|r| (r.dataset_name.as_str(), r.subject_id.as_str()))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if subjects.len() < k {
        return Err(PadError::Protocol(format!(
            "kfold({k}) needs at least {k} subjects, train has {}",
            subjects.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    subjects.shuffle(&mut rng);
    let fold_of: BTreeMap<(&str, &str), usize> = subjects
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s, i % k))
        .collect();
    Ok(records
        .iter()
        .map(|r| fold_of[&(r.dataset_name.as_str(), r.subject_id.as_str())])
        .collect())
}
