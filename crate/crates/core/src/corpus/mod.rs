//! Labeled sentences: dataset loading, ratio curation, coder-quality and
//! consensus-labeling rules, and stratified fold assignment.

mod curation;
mod folds;
mod io;
mod labeling;
mod synthetic;

pub use curation::{curate_ratio, CurationReport};
pub use folds::{stratified_folds, stratified_holdout};
pub use io::{load_cbd, load_clef, save_tsv, ClefDataset, ClefFile};
pub use synthetic::synthetic_corpus;
pub use labeling::{
    coder_quality, consensus_label, pay_rate, CoderRecord, QualityRule, AGREE_WEIGHT, DISAGREE_WEIGHT,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Binary check-worthiness class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    /// Non-check-worthy sentence.
    #[serde(rename = "NCS")]
    Ncs,
    /// Check-worthy factual sentence.
    #[serde(rename = "CFS")]
    Cfs,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Ncs, Label::Cfs];

    /// Position in the classifier output.
    pub fn index(self) -> usize {
        match self {
            Label::Ncs => 0,
            Label::Cfs => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Ncs),
            1 => Some(Label::Cfs),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Ncs => "NCS",
            Label::Cfs => "CFS",
        }
    }

    /// Accepts `NCS`/`CFS` (any case) and the numeric codes of the released
    /// files: `1` is CFS, `0` and `-1` are NCS.
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_uppercase().as_str() {
            "NCS" | "0" | "-1" | "0.0" | "-1.0" => Some(Label::Ncs),
            "CFS" | "1" | "1.0" => Some(Label::Cfs),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::parse(s).ok_or_else(|| format!("unknown label {s:?}"))
    }
}

/// One sentence with its gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub text: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

impl LabeledSentence {
    pub fn new(text: impl Into<String>, label: Label) -> Self {
        Self {
            text: text.into(),
            label,
            source_id: None,
        }
    }
}

/// Per-class sentence counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub ncs: usize,
    pub cfs: usize,
}

impl ClassCounts {
    pub fn of(sentences: &[LabeledSentence]) -> Self {
        let cfs = sentences.iter().filter(|s| s.label == Label::Cfs).count();
        Self {
            ncs: sentences.len() - cfs,
            cfs,
        }
    }

    pub fn total(&self) -> usize {
        self.ncs + self.cfs
    }
}
