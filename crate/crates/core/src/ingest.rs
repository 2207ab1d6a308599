//! Loading, filtering and splitting of OLID-style labeled tweet files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} tab-separated columns, found {found}")]
    ColumnCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: unknown label {value:?}")]
    UnknownLabel { line: usize, value: String },
    #[error("header is missing required column {0:?}")]
    MissingColumn(&'static str),
    #[error("file has no header row")]
    MissingHeader,
    #[error("line {line}: empty id")]
    EmptyId { line: usize },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: record {id:?} has a subtask B label but is not OFF")]
    OrphanTargetLabel { line: usize, id: String },
    #[error("validation fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("class {class} has {count} record(s); at least 2 are needed to stratify")]
    ClassTooSmall { class: String, count: usize },
}

/// Binary label universe used by the evaluation code.
pub trait ClassLabel: Copy + Eq + Ord + fmt::Debug + fmt::Display + Send + Sync + 'static {
    /// Both classes, in the fixed order used for confusion matrices.
    const ALL: [Self; 2];

    fn index(self) -> usize {
        Self::ALL.iter().position(|&l| l == self).expect("label in ALL")
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|l| l.to_string() == s)
    }
}

/// Sub-task A label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OffenseLabel {
    #[serde(rename = "NOT")]
    Not,
    #[serde(rename = "OFF")]
    Off,
}

/// Sub-task B label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TargetLabel {
    #[serde(rename = "TIN")]
    Tin,
    #[serde(rename = "UNT")]
    Unt,
}

impl fmt::Display for OffenseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OffenseLabel::Not => "NOT",
            OffenseLabel::Off => "OFF",
        })
    }
}

impl fmt::Display for TargetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetLabel::Tin => "TIN",
            TargetLabel::Unt => "UNT",
        })
    }
}

impl ClassLabel for OffenseLabel {
    const ALL: [Self; 2] = [OffenseLabel::Not, OffenseLabel::Off];
}

impl ClassLabel for TargetLabel {
    const ALL: [Self; 2] = [TargetLabel::Tin, TargetLabel::Unt];
}

impl FromStr for OffenseLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::parse(s).ok_or_else(|| s.to_string())
    }
}

impl FromStr for TargetLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::parse(s).ok_or_else(|| s.to_string())
    }
}

/// Which sub-task's labels to look at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    A,
    B,
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Task::A),
            "b" => Ok(Task::B),
            other => Err(format!("unknown task {other:?}, expected A or B")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetRecord {
    pub id: String,
    pub text: String,
    pub label_a: Option<OffenseLabel>,
    pub label_b: Option<TargetLabel>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub split_tag: SplitTag,
}

impl Dataset {
    pub fn new(records: Vec<DatasetRecord>, split_tag: SplitTag) -> Self {
        Self { records, split_tag }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }
}

/// Ids of records to drop from training data.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExclusionList {
    pub ids: HashSet<String>,
}

impl ExclusionList {
    /// One id per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        let ids = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        Self { ids }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        Ok(Self::parse(&read(path.as_ref())?))
    }
}

impl<S: Into<String>> FromIterator<S> for ExclusionList {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self {
            ids: iter.into_iter().map(Into::into).collect(),
        }
    }
}

fn read(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_olid(path: impl AsRef<Path>, has_labels: bool) -> Result<Dataset, IngestError> {
    parse_olid(&read(path.as_ref())?, has_labels)
}

/// Parses the TSV body of an OLID file. Line numbers in errors are 1-based
/// and count the header.
pub fn parse_olid(text: &str, has_labels: bool) -> Result<Dataset, IngestError> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l,
            None => return Err(IngestError::MissingHeader),
        }
    };
    let columns: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
    let find = |name: &'static str| {
        columns
            .iter()
            .position(|c| c.trim() == name)
            .ok_or(IngestError::MissingColumn(name))
    };
    let id_col = find("id")?;
    let tweet_col = find("tweet")?;
    let label_cols = if has_labels {
        Some((find("subtask_a")?, find("subtask_b")?))
    } else {
        None
    };

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in lines {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != columns.len() {
            return Err(IngestError::ColumnCount {
                line,
                expected: columns.len(),
                found: fields.len(),
            });
        }
        let id = fields[id_col].trim().to_string();
        if id.is_empty() {
            return Err(IngestError::EmptyId { line });
        }
        let (label_a, label_b) = match label_cols {
            None => (None, None),
            Some((a, b)) => (
                parse_label::<OffenseLabel>(fields[a], line)?,
                parse_label::<TargetLabel>(fields[b], line)?,
            ),
        };
        if label_b.is_some() && label_a != Some(OffenseLabel::Off) {
            return Err(IngestError::OrphanTargetLabel { line, id });
        }
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId { line, id });
        }
        records.push(DatasetRecord {
            id,
            text: fields[tweet_col].to_string(),
            label_a,
            label_b,
        });
    }
    Ok(Dataset::new(records, SplitTag::Train))
}

fn parse_label<L: ClassLabel>(field: &str, line: usize) -> Result<Option<L>, IngestError> {
    let field = field.trim();
    if field == "NULL" || field.is_empty() {
        return Ok(None);
    }
    L::parse(field).map(Some).ok_or_else(|| IngestError::UnknownLabel {
        line,
        value: field.to_string(),
    })
}

/// Result of [`apply_exclusions`]: the filtered dataset and how many
/// excluded ids did not occur in it.
#[derive(Clone, Debug)]
pub struct Filtered {
    pub dataset: Dataset,
    pub unmatched: usize,
}

pub fn apply_exclusions(d: &Dataset, x: &ExclusionList) -> Filtered {
    let records: Vec<DatasetRecord> = d
        .records
        .iter()
        .filter(|r| !x.ids.contains(&r.id))
        .cloned()
        .collect();
    let present: HashSet<&str> = d.ids().collect();
    let unmatched = x.ids.iter().filter(|id| !present.contains(id.as_str())).count();
    Filtered {
        dataset: Dataset::new(records, d.split_tag),
        unmatched,
    }
}

pub fn class_distribution(d: &Dataset, task: Task) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in &d.records {
        let label = match task {
            Task::A => r.label_a.map(|l| l.to_string()),
            Task::B => r.label_b.map(|l| l.to_string()),
        };
        if let Some(label) = label {
            *counts.entry(label).or_insert(0) += 1;
        }
    }
    counts
}

/// Splits `d` into (train, validation), stratified on the sub-task A label.
/// Records without a label form their own stratum.
pub fn stratified_split(
    d: &Dataset,
    validation_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), IngestError> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(IngestError::BadFraction(validation_fraction));
    }
    let mut strata: BTreeMap<Option<OffenseLabel>, Vec<usize>> = BTreeMap::new();
    for (i, r) in d.records.iter().enumerate() {
        strata.entry(r.label_a).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_validation = vec![false; d.len()];
    for (label, mut members) in strata {
        if members.len() < 2 {
            return Err(IngestError::ClassTooSmall {
                class: label.map_or_else(|| "unlabeled".to_string(), |l| l.to_string()),
                count: members.len(),
            });
        }
        let take = (validation_fraction * members.len() as f64).round() as usize;
        members.shuffle(&mut rng);
        for &i in &members[..take] {
            in_validation[i] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (r, v) in d.records.iter().zip(in_validation) {
        if v { &mut val } else { &mut train }.push(r.clone());
    }
    Ok((
        Dataset::new(train, SplitTag::Train),
        Dataset::new(val, SplitTag::Validation),
    ))
}

/// Index from id to record, for joining predictions with gold labels.
pub fn index_by_id(d: &Dataset) -> HashMap<&str, &DatasetRecord> {
    d.records.iter().map(|r| (r.id.as_str(), r)).collect()
}
