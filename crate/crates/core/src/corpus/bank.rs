//! Few-shot prompt banks.
//!
//! A bank file is a three-line header followed by `k` example blocks, each
//! preceded by one blank line:
//!
//! ```text
//! dataset_id: nq
//! kind: qa
//! k: 15
//!
//! Evidence: ...
//! Question: ...
//! Answer: ...
//!
//! Evidence: ...
//! ```
//!
//! Fields appear in the order the bank's kind prints them in a prompt, with
//! fields the prompt does not print appended (so every example still carries
//! its evidence, question and answer). Example text is kept byte-for-byte;
//! a value may span several lines as long as no continuation line is blank
//! or starts with a field label.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of in-context examples used for every prompt.
pub const DEFAULT_SHOTS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    /// Answer a question given evidence: p(a | q, p).
    Qa,
    /// Reconstruct the question from evidence and answer: p(q | a, p).
    QGivenAp,
    /// Question from evidence alone: p(q | p).
    QGivenP,
    /// Evidence from the question: p(p | q).
    PGivenQ,
    /// Answer from evidence alone: p(a | p).
    AGivenP,
}

impl PromptKind {
    pub const ALL: [PromptKind; 5] = [
        PromptKind::Qa,
        PromptKind::QGivenAp,
        PromptKind::QGivenP,
        PromptKind::PGivenQ,
        PromptKind::AGivenP,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Qa => "qa",
            PromptKind::QGivenAp => "q_given_ap",
            PromptKind::QGivenP => "q_given_p",
            PromptKind::PGivenQ => "p_given_q",
            PromptKind::AGivenP => "a_given_p",
        }
    }

    /// Fields printed in each few-shot block, in order. The last one is the
    /// quantity the prompt asks the model for.
    pub fn prompt_fields(self) -> &'static [Field] {
        use Field::*;
        match self {
            PromptKind::Qa => &[Evidence, Question, Answer],
            PromptKind::QGivenAp => &[Evidence, Answer, Question],
            PromptKind::QGivenP => &[Evidence, Question],
            PromptKind::PGivenQ => &[Question, Evidence],
            PromptKind::AGivenP => &[Evidence, Answer],
        }
    }

    /// The field whose label closes the target block.
    pub fn cue(self) -> Field {
        *self.prompt_fields().last().expect("every kind prints a field")
    }

    /// Field order inside a bank file of this kind.
    pub fn file_layout(self) -> [Field; 3] {
        let mut layout = [Field::Evidence; 3];
        let used = self.prompt_fields();
        layout[..used.len()].copy_from_slice(used);
        let mut i = used.len();
        for f in Field::ALL {
            if !used.contains(&f) {
                layout[i] = f;
                i += 1;
            }
        }
        layout
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PromptKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidBank(format!("unknown prompt kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Evidence,
    Question,
    Answer,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::Evidence, Field::Question, Field::Answer];

    /// Literal label including the colon, e.g. `Evidence:`.
    pub fn label(self) -> &'static str {
        match self {
            Field::Evidence => "Evidence:",
            Field::Question => "Question:",
            Field::Answer => "Answer:",
        }
    }

    fn starts_line(line: &str) -> bool {
        Field::ALL.iter().any(|f| line.starts_with(f.label()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub evidence: String,
    pub question: String,
    pub answer: String,
}

impl FewShotExample {
    pub fn new(evidence: impl Into<String>, question: impl Into<String>, answer: impl Into<String>) -> Self {
        FewShotExample {
            evidence: evidence.into(),
            question: question.into(),
            answer: answer.into(),
        }
    }

    pub fn get(&self, field: Field) -> &str {
        match field {
            Field::Evidence => &self.evidence,
            Field::Question => &self.question,
            Field::Answer => &self.answer,
        }
    }

    fn set(&mut self, field: Field, value: String) {
        match field {
            Field::Evidence => self.evidence = value,
            Field::Question => self.question = value,
            Field::Answer => self.answer = value,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        for field in Field::ALL {
            let value = self.get(field);
            let bad =
                |why: &str| Error::InvalidBank(format!("example {} {}: {why}", index + 1, field.label()));
            if value.trim().is_empty() {
                return Err(bad("empty"));
            }
            for (n, line) in value.split('\n').enumerate() {
                if line.trim().is_empty() {
                    return Err(bad("contains a blank line"));
                }
                if n > 0 && Field::starts_line(line) {
                    return Err(bad("continuation line starts with a field label"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBank {
    pub dataset_id: String,
    pub kind: PromptKind,
    examples: Vec<FewShotExample>,
}

impl PromptBank {
    pub fn new(
        dataset_id: impl Into<String>,
        kind: PromptKind,
        examples: Vec<FewShotExample>,
    ) -> Result<Self> {
        let dataset_id = dataset_id.into();
        if dataset_id.trim().is_empty() || dataset_id.contains('\n') {
            return Err(Error::InvalidBank("dataset_id must be a non-empty line".into()));
        }
        if examples.is_empty() {
            return Err(Error::InvalidBank("bank has no examples".into()));
        }
        for (i, ex) in examples.iter().enumerate() {
            ex.validate(i)?;
        }
        Ok(PromptBank {
            dataset_id,
            kind,
            examples,
        })
    }

    pub fn examples(&self) -> &[FewShotExample] {
        &self.examples
    }

    pub fn k(&self) -> usize {
        self.examples.len()
    }

    /// The first `k` examples.
    pub fn first(&self, k: usize) -> Result<PromptBank> {
        if k == 0 || k > self.examples.len() {
            return Err(Error::InvalidBank(format!(
                "{} {} bank has {} examples, cannot take {k}",
                self.dataset_id,
                self.kind,
                self.examples.len()
            )));
        }
        let mut bank = self.clone();
        bank.examples.truncate(k);
        Ok(bank)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::InvalidBank(m) => Error::InvalidBank(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, m: &str| Error::InvalidBank(format!("line {line}: {m}"));
        let body = text
            .strip_suffix('\n')
            .ok_or_else(|| err(0, "file must end with a newline"))?;
        let lines: Vec<&str> = body.split('\n').collect();

        let header = |i: usize, key: &str| -> Result<&str> {
            lines
                .get(i)
                .and_then(|l| l.strip_prefix(key))
                .and_then(|l| l.strip_prefix(": "))
                .ok_or_else(|| err(i + 1, &format!("expected `{key}: ...` header")))
        };
        let dataset_id = header(0, "dataset_id")?.to_string();
        let kind: PromptKind = header(1, "kind")?.parse()?;
        let declared_k: usize = header(2, "k")?
            .parse()
            .map_err(|_| err(3, "k must be a non-negative integer"))?;

        let layout = kind.file_layout();
        let mut examples = Vec::new();
        let mut i = 3;
        while i < lines.len() {
            if !lines[i].is_empty() {
                return Err(err(i + 1, "expected a blank line before each example"));
            }
            i += 1;
            let mut example = FewShotExample::new("", "", "");
            for field in layout {
                let first = lines
                    .get(i)
                    .and_then(|l| l.strip_prefix(field.label()))
                    .and_then(|l| l.strip_prefix(' '))
                    .ok_or_else(|| err(i + 1, &format!("expected `{} ...`", field.label())))?;
                let mut value = first.to_string();
                i += 1;
                while let Some(line) = lines.get(i) {
                    if line.is_empty() || Field::starts_line(line) {
                        break;
                    }
                    value.push('\n');
                    value.push_str(line);
                    i += 1;
                }
                example.set(field, value);
            }
            examples.push(example);
        }
        if examples.len() != declared_k {
            return Err(Error::InvalidBank(format!(
                "header declares k={declared_k} but the file holds {} examples",
                examples.len()
            )));
        }
        PromptBank::new(dataset_id, kind, examples)
    }

    /// Canonical file text; `parse(serialize(b)) == b` and, for any file that
    /// parses, `serialize(parse(text)) == text`.
    pub fn serialize(&self) -> String {
        let mut out = format!(
            "dataset_id: {}\nkind: {}\nk: {}\n",
            self.dataset_id,
            self.kind,
            self.examples.len()
        );
        for ex in &self.examples {
            out.push('\n');
            for field in self.kind.file_layout() {
                out.push_str(field.label());
                out.push(' ');
                out.push_str(ex.get(field));
                out.push('\n');
            }
        }
        out
    }

    /// Re-label this bank's examples for another prompt kind.
    ///
    /// Scorer prompts reuse the question-answering examples: the a(p) prompt
    /// drops the question, the q(p) prompt drops the answer, and so on. Only
    /// `qa` and `q_given_ap` banks are accepted as sources, since those are
    /// the ones whose examples carry all three fields by construction.
    pub fn derive(&self, kind: PromptKind) -> Result<PromptBank> {
        if kind == self.kind {
            return Ok(self.clone());
        }
        match self.kind {
            PromptKind::Qa | PromptKind::QGivenAp if kind != PromptKind::Qa => Ok(PromptBank {
                dataset_id: self.dataset_id.clone(),
                kind,
                examples: self.examples.clone(),
            }),
            _ => Err(Error::InvalidBank(format!(
                "cannot derive a {kind} bank from a {} bank",
                self.kind
            ))),
        }
    }
}

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../assets/banks/", $name)))),*]
    };
}

static BUILTIN_BANKS: &[(&str, &str)] = builtin![
    "nq.qa.bank",
    "hotpotqa.qa.bank",
    "strategyqa.qa.bank",
    "fever.qa.bank",
    "nq.q_given_ap.bank",
    "nq.p_given_q.bank",
];

/// Datasets with a shipped question-answering bank.
pub const BUILTIN_DATASETS: [&str; 4] = ["nq", "hotpotqa", "strategyqa", "fever"];

pub fn bank_file_name(dataset_id: &str, kind: PromptKind) -> String {
    format!("{dataset_id}.{kind}.bank")
}

/// Resolves banks for a dataset: files in an optional directory take
/// precedence over the shipped assets, and kinds with no file of their own
/// are derived from the closest source bank.
#[derive(Debug, Clone, Default)]
pub struct BankLibrary {
    dir: Option<PathBuf>,
}

impl BankLibrary {
    pub fn builtin() -> Self {
        BankLibrary { dir: None }
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        BankLibrary {
            dir: Some(dir.into()),
        }
    }

    fn exact(&self, dataset_id: &str, kind: PromptKind) -> Result<Option<PromptBank>> {
        let name = bank_file_name(dataset_id, kind);
        if let Some(dir) = &self.dir {
            let path = dir.join(&name);
            if path.is_file() {
                return PromptBank::load(&path).map(Some);
            }
        }
        BUILTIN_BANKS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| PromptBank::parse(text))
            .transpose()
    }

    pub fn get(&self, dataset_id: &str, kind: PromptKind) -> Result<PromptBank> {
        if let Some(bank) = self.exact(dataset_id, kind)? {
            return Ok(bank);
        }
        let sources: &[PromptKind] = match kind {
            PromptKind::Qa => &[],
            PromptKind::QGivenP | PromptKind::PGivenQ => &[PromptKind::QGivenAp, PromptKind::Qa],
            PromptKind::QGivenAp | PromptKind::AGivenP => &[PromptKind::Qa],
        };
        for &source in sources {
            if let Some(bank) = self.exact(dataset_id, source)? {
                return bank.derive(kind);
            }
        }
        Err(Error::InvalidBank(format!(
            "no {kind} bank (or source to derive one) for dataset {dataset_id:?}"
        )))
    }
}
