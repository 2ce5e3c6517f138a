//! Corpus records, section splits, label spaces, and evaluation metrics.
//!
//! # Record format
//!
//! One JSON object per line:
//!
//! ```json
//! {"id":"wsj_0201-3","arg1":["prices","fell"],"arg2":["investors","sold"],
//!  "senses":["Contingency.Cause.Result"],"connective":"so","section":2}
//! ```
//!
//! `senses` holds PDTB-style dotted sense paths (Class, Class.Type or
//! Class.Type.Subtype); `connective` is the annotated implicit connective and
//! may be omitted outside the training sections. Blank lines are ignored.

pub mod metrics;
pub mod synthetic;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use metrics::{accuracy_multigold, f1_binary, macro_f1, macro_f1_4way, ClassCounts};

/// Padding token used to fill argument sequences to a fixed length.
pub const PAD: &str = "<pad>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgRole {
    Arg1,
    Arg2,
}

impl fmt::Display for ArgRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArgRole::Arg1 => "arg1",
            ArgRole::Arg2 => "arg2",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub arg1: Vec<String>,
    pub arg2: Vec<String>,
    pub senses: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connective: Option<String>,
    pub section: u8,
}

impl InstanceRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.senses.is_empty() {
            return Err("senses must be non-empty".into());
        }
        if self.section > 24 {
            return Err(format!("section {} outside 0..=24", self.section));
        }
        if self.arg1.is_empty() || self.arg2.is_empty() {
            return Err("both arguments need at least one token".into());
        }
        Ok(())
    }

    pub fn arg(&self, role: ArgRole) -> &[String] {
        match role {
            ArgRole::Arg1 => &self.arg1,
            ArgRole::Arg2 => &self.arg2,
        }
    }
}

pub fn parse_corpus(text: &str, origin: &str) -> Result<Vec<InstanceRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message,
        };
        let record: InstanceRecord =
            serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        record.validate().map_err(err)?;
        records.push(record);
    }
    Ok(records)
}

pub fn load_corpus(path: &Path) -> Result<Vec<InstanceRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, &path.display().to_string())
}

pub fn serialize_corpus(records: &[InstanceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_corpus(records: &[InstanceRecord], path: &Path) -> Result<()> {
    std::fs::write(path, serialize_corpus(records)).map_err(|e| Error::io(path, e))
}

/// Fixed-length view of a token sequence: first `n` tokens, then [`PAD`].
pub fn pad_truncate(tokens: &[String], n: usize) -> Vec<String> {
    let mut out: Vec<String> = tokens.iter().take(n).cloned().collect();
    out.resize(n, PAD.to_string());
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitName {
    #[serde(rename = "PDTB-Lin")]
    Lin,
    #[serde(rename = "PDTB-Ji")]
    Ji,
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pdtb-lin" | "lin" => Ok(SplitName::Lin),
            "pdtb-ji" | "ji" => Ok(SplitName::Ji),
            other => Err(Error::config("split", format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Lin => "PDTB-Lin",
            SplitName::Ji => "PDTB-Ji",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitConfig {
    pub name: SplitName,
    pub train: BTreeSet<u8>,
    pub dev: BTreeSet<u8>,
    pub test: BTreeSet<u8>,
}

impl SplitConfig {
    pub fn new(name: SplitName) -> Self {
        let (train, dev, test) = match name {
            SplitName::Lin => (2..=21, 22..=22, 23..=23),
            SplitName::Ji => (2..=20, 0..=1, 21..=22),
        };
        SplitConfig {
            name,
            train: train.collect(),
            dev: dev.collect(),
            test: test.collect(),
        }
    }

    pub fn is_disjoint(&self) -> bool {
        self.train.is_disjoint(&self.dev)
            && self.train.is_disjoint(&self.test)
            && self.dev.is_disjoint(&self.test)
    }
}

pub const CLASSES: [&str; 4] = ["Comparison", "Contingency", "Expansion", "Temporal"];

/// The sixteen second-level types, by class.
pub const TYPES: [(&str, &str); 16] = [
    ("Comparison", "Concession"),
    ("Comparison", "Contrast"),
    ("Comparison", "Pragmatic concession"),
    ("Comparison", "Pragmatic contrast"),
    ("Contingency", "Cause"),
    ("Contingency", "Condition"),
    ("Contingency", "Pragmatic cause"),
    ("Contingency", "Pragmatic condition"),
    ("Expansion", "Alternative"),
    ("Expansion", "Conjunction"),
    ("Expansion", "Exception"),
    ("Expansion", "Instantiation"),
    ("Expansion", "List"),
    ("Expansion", "Restatement"),
    ("Temporal", "Asynchronous"),
    ("Temporal", "Synchrony"),
];

/// Default eleven-way label set: the sixteen types minus the five that lack
/// dev/test instances (both pragmatic Comparison types, Condition, Pragmatic
/// condition, Exception).
pub const DEFAULT_ELEVEN_TYPES: [&str; 11] = [
    "Comparison.Concession",
    "Comparison.Contrast",
    "Contingency.Cause",
    "Contingency.Pragmatic cause",
    "Expansion.Alternative",
    "Expansion.Conjunction",
    "Expansion.Instantiation",
    "Expansion.List",
    "Expansion.Restatement",
    "Temporal.Asynchronous",
    "Temporal.Synchrony",
];

/// Sense strings that are valid but never map to a class.
const NON_DISCOURSE: [&str; 2] = ["EntRel", "NoRel"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "target", rename_all = "kebab-case")]
pub enum TaskMode {
    ElevenWay,
    FourWay,
    /// One-vs-others on a top-level class.
    Binary(String),
}

impl FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "eleven-way" | "11-way" => Ok(TaskMode::ElevenWay),
            "four-way" | "4-way" => Ok(TaskMode::FourWay),
            _ => match lower.strip_prefix("binary:") {
                Some(class) => Ok(TaskMode::Binary(canonical_class(class).ok_or_else(|| {
                    Error::config("task", format!("unknown class `{class}`"))
                })?)),
                None => Err(Error::config("task", format!("unknown task `{s}`"))),
            },
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskMode::ElevenWay => f.write_str("eleven-way"),
            TaskMode::FourWay => f.write_str("four-way"),
            TaskMode::Binary(c) => write!(f, "binary:{c}"),
        }
    }
}

fn canonical_class(s: &str) -> Option<String> {
    CLASSES
        .iter()
        .find(|c| c.eq_ignore_ascii_case(s.trim()))
        .map(|c| c.to_string())
}

fn canonical_type(class: &str, ty: &str) -> Option<String> {
    TYPES
        .iter()
        .find(|(c, t)| *c == class && t.eq_ignore_ascii_case(ty.trim()))
        .map(|(c, t)| format!("{c}.{t}"))
}

/// Maps sense strings to class indices for one task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub mode: TaskMode,
    pub classes: Vec<String>,
}

impl LabelSpace {
    pub fn eleven_way() -> Self {
        LabelSpace::with_types(DEFAULT_ELEVEN_TYPES.iter().map(|s| s.to_string()).collect())
            .expect("default types are valid")
    }

    /// Eleven-way style space over a configured list of retained types.
    pub fn with_types(types: Vec<String>) -> Result<Self> {
        let mut classes = Vec::with_capacity(types.len());
        for t in &types {
            let (class, ty) = t
                .split_once('.')
                .ok_or_else(|| Error::Label(format!("`{t}` is not a Class.Type sense")))?;
            let class = canonical_class(class)
                .ok_or_else(|| Error::Label(format!("unknown class in `{t}`")))?;
            classes.push(
                canonical_type(&class, ty)
                    .ok_or_else(|| Error::Label(format!("unknown type `{t}`")))?,
            );
        }
        Ok(LabelSpace {
            mode: TaskMode::ElevenWay,
            classes,
        })
    }

    pub fn four_way() -> Self {
        LabelSpace {
            mode: TaskMode::FourWay,
            classes: CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn binary(target: &str) -> Result<Self> {
        let class = canonical_class(target)
            .ok_or_else(|| Error::Label(format!("unknown class `{target}`")))?;
        Ok(LabelSpace {
            mode: TaskMode::Binary(class.clone()),
            classes: vec![format!("Non-{class}"), class],
        })
    }

    pub fn for_mode(mode: &TaskMode, retained_types: Option<Vec<String>>) -> Result<Self> {
        match mode {
            TaskMode::ElevenWay => match retained_types {
                Some(types) => LabelSpace::with_types(types),
                None => Ok(LabelSpace::eleven_way()),
            },
            TaskMode::FourWay => Ok(LabelSpace::four_way()),
            TaskMode::Binary(c) => LabelSpace::binary(c),
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Class index for one sense string, `None` when the sense is valid but
    /// not part of this task.
    pub fn label_of(&self, sense: &str) -> Result<Option<usize>> {
        let sense = sense.trim();
        if NON_DISCOURSE.iter().any(|s| s.eq_ignore_ascii_case(sense)) {
            return Ok(None);
        }
        let mut parts = sense.split('.');
        let class = parts
            .next()
            .and_then(canonical_class)
            .ok_or_else(|| Error::Label(format!("unknown sense `{sense}`")))?;
        let ty = match parts.next() {
            Some(t) => Some(
                canonical_type(&class, t)
                    .ok_or_else(|| Error::Label(format!("unknown sense `{sense}`")))?,
            ),
            None => None,
        };
        Ok(match &self.mode {
            TaskMode::ElevenWay => ty.and_then(|t| self.classes.iter().position(|c| *c == t)),
            TaskMode::FourWay => self.classes.iter().position(|c| *c == class),
            TaskMode::Binary(target) => Some(usize::from(class == *target)),
        })
    }

    /// Distinct class indices of a record's senses, in annotation order.
    pub fn labels_of(&self, senses: &[String]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for s in senses {
            if let Some(l) = self.label_of(s)? {
                if !out.contains(&l) {
                    out.push(l);
                }
            }
        }
        Ok(out)
    }
}

/// A labelled argument pair ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: String,
    pub arg1: Vec<String>,
    pub arg2: Vec<String>,
    /// Exactly one label for training instances; the full gold set otherwise.
    pub labels: Vec<usize>,
    pub connective: Option<String>,
    pub section: u8,
}

#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Vec<Instance>,
    pub dev: Vec<Instance>,
    pub test: Vec<Instance>,
}

/// Assigns records to train/dev/test by section. Training records with several
/// retained senses become one instance per sense; dev/test records keep the
/// whole gold set. Records with no retained sense are dropped.
pub fn make_splits(
    records: &[InstanceRecord],
    split: &SplitConfig,
    labels: &LabelSpace,
) -> Result<Splits> {
    let mut out = Splits::default();
    for r in records {
        let gold = labels
            .labels_of(&r.senses)
            .map_err(|e| Error::Label(format!("record `{}`: {e}", r.id)))?;
        if gold.is_empty() {
            continue;
        }
        let make = |labels: Vec<usize>| Instance {
            id: r.id.clone(),
            arg1: r.arg1.clone(),
            arg2: r.arg2.clone(),
            labels,
            connective: r.connective.clone(),
            section: r.section,
        };
        if split.train.contains(&r.section) {
            out.train.extend(gold.iter().map(|&l| make(vec![l])));
        } else if split.dev.contains(&r.section) {
            out.dev.push(make(gold));
        } else if split.test.contains(&r.section) {
            out.test.push(make(gold));
        }
    }
    Ok(out)
}
