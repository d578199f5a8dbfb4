use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Generation,
    Classification,
}

/// What counts as a correct answer for a record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    /// Admissible answer strings, deduplicated, in file order.
    Answers(Vec<String>),
    Label {
        gold: String,
        label_set: Vec<String>,
    },
}

/// One dataset item: a question, its admissible answers (or class label) and
/// the gold evidence passages that came with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord", into = "RawRecord")]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    pub target: Target,
    pub gold_evidence: Vec<String>,
}

impl QuestionRecord {
    pub fn generation(
        id: impl Into<String>,
        question: impl Into<String>,
        answers: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self> {
        QuestionRecord {
            id: id.into(),
            question: question.into(),
            target: Target::Answers(answers.into_iter().map(Into::into).collect()),
            gold_evidence: Vec::new(),
        }
        .validated()
    }

    pub fn classification(
        id: impl Into<String>,
        question: impl Into<String>,
        gold: impl Into<String>,
        label_set: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self> {
        QuestionRecord {
            id: id.into(),
            question: question.into(),
            target: Target::Label {
                gold: gold.into(),
                label_set: label_set.into_iter().map(Into::into).collect(),
            },
            gold_evidence: Vec::new(),
        }
        .validated()
    }

    pub fn with_gold_evidence(mut self, passages: Vec<String>) -> Self {
        self.gold_evidence = passages;
        self
    }

    pub fn task(&self) -> Task {
        match self.target {
            Target::Answers(_) => Task::Generation,
            Target::Label { .. } => Task::Classification,
        }
    }

    pub fn answers(&self) -> Option<&[String]> {
        match &self.target {
            Target::Answers(a) => Some(a),
            Target::Label { .. } => None,
        }
    }

    pub fn label_set(&self) -> Option<&[String]> {
        match &self.target {
            Target::Label { label_set, .. } => Some(label_set),
            Target::Answers(_) => None,
        }
    }

    pub fn gold_label(&self) -> Option<&str> {
        match &self.target {
            Target::Label { gold, .. } => Some(gold),
            Target::Answers(_) => None,
        }
    }

    fn validated(mut self) -> Result<Self> {
        let invalid = |message: &str| Error::InvalidRecord {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(invalid("empty id"));
        }
        if self.question.trim().is_empty() {
            return Err(invalid("empty question"));
        }
        match &mut self.target {
            Target::Answers(answers) => {
                let mut seen = HashSet::new();
                answers.retain(|a| seen.insert(a.clone()));
                if answers.is_empty() {
                    return Err(invalid("generation record without answers"));
                }
            }
            Target::Label { gold, label_set } => {
                let distinct: HashSet<_> = label_set.iter().collect();
                if distinct.len() != label_set.len() {
                    return Err(invalid("label_set has duplicates"));
                }
                if label_set.len() < 2 {
                    return Err(invalid("label_set needs at least two labels"));
                }
                if !label_set.contains(gold) {
                    let message = format!("gold_label {gold:?} not in label_set");
                    return Err(invalid(&message));
                }
            }
        }
        Ok(self)
    }
}

/// On-disk shape of a record: one JSON object per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    question: String,
    task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_set: Option<Vec<String>>,
    #[serde(default)]
    gold_evidence: Vec<String>,
}

impl TryFrom<RawRecord> for QuestionRecord {
    type Error = Error;

    fn try_from(raw: RawRecord) -> Result<Self> {
        let invalid = |message: &str| Error::InvalidRecord {
            id: raw.id.clone(),
            message: message.to_string(),
        };
        let target = match raw.task {
            Task::Generation => {
                if raw.label_set.is_some() || raw.gold_label.is_some() {
                    return Err(invalid("generation record with label fields"));
                }
                Target::Answers(raw.answers.clone().ok_or_else(|| invalid("missing answers"))?)
            }
            Task::Classification => {
                if raw.answers.is_some() {
                    return Err(invalid("classification record with answers"));
                }
                Target::Label {
                    gold: raw
                        .gold_label
                        .clone()
                        .ok_or_else(|| invalid("missing gold_label"))?,
                    label_set: raw
                        .label_set
                        .clone()
                        .ok_or_else(|| invalid("missing label_set"))?,
                }
            }
        };
        QuestionRecord {
            id: raw.id,
            question: raw.question,
            target,
            gold_evidence: raw.gold_evidence,
        }
        .validated()
    }
}

impl From<QuestionRecord> for RawRecord {
    fn from(r: QuestionRecord) -> Self {
        let (task, answers, gold_label, label_set) = match r.target {
            Target::Answers(a) => (Task::Generation, Some(a), None, None),
            Target::Label { gold, label_set } => (Task::Classification, None, Some(gold), Some(label_set)),
        };
        RawRecord {
            id: r.id,
            question: r.question,
            task,
            answers,
            gold_label,
            label_set,
            gold_evidence: r.gold_evidence,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DatasetFormat {
    /// One JSON object per line, blank lines ignored.
    #[default]
    JsonLines,
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<QuestionRecord>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    match format {
        DatasetFormat::JsonLines => parse_json_lines(BufReader::new(file), path),
    }
}

fn parse_json_lines(reader: impl BufRead, path: &Path) -> Result<Vec<QuestionRecord>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QuestionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if !ids.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

/// Serialize records in the line-delimited dataset format.
pub fn to_json_lines(records: &[QuestionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records always serialize"));
        out.push('\n');
    }
    out
}
