//! Task metrics and evaluation reports.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::chunkrank::tokenize;
use crate::corpus::{QuestionRecord, Target};
use crate::error::{Error, Result};

const STOPWORDS: &str = include_str!("../assets/stopwords.txt");

/// Unicode punctuation removed alongside ASCII punctuation.
const EXTRA_PUNCTUATION: &[char] = &[
    '\u{2018}', '\u{2019}', '\u{201c}', '\u{201d}', '\u{2013}', '\u{2014}', '\u{2026}', '\u{ab}', '\u{bb}',
    '\u{b4}',
];

/// Lowercase, delete punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation() && !EXTRA_PUNCTUATION.contains(c))
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match<S: AsRef<str>>(prediction: &str, answers: &[S]) -> bool {
    let p = normalize_answer(prediction);
    answers.iter().any(|a| normalize_answer(a.as_ref()) == p)
}

pub fn accuracy<S: AsRef<str>>(prediction: &str, gold: &str, label_set: &[S]) -> Result<bool> {
    for label in [prediction, gold] {
        if !label_set.iter().any(|l| l.as_ref() == label) {
            return Err(Error::UnknownLabel {
                label: label.to_string(),
                label_set: label_set.iter().map(|l| l.as_ref().to_string()).collect(),
            });
        }
    }
    Ok(prediction == gold)
}

/// True when some admissible answer appears, after normalization, inside one
/// of the first `k` paragraphs.
pub fn answer_recall_at_k<A: AsRef<str>, P: AsRef<str>>(answers: &[A], paragraphs: &[P], k: usize) -> bool {
    let needles: Vec<String> = answers
        .iter()
        .map(|a| normalize_answer(a.as_ref()))
        .filter(|a| !a.is_empty())
        .collect();
    paragraphs.iter().take(k).any(|p| {
        let hay = normalize_answer(p.as_ref());
        needles.iter().any(|n| hay.contains(n.as_str()))
    })
}

/// Smallest k at which [`answer_recall_at_k`] becomes true.
pub fn first_hit_rank<A: AsRef<str>, P: AsRef<str>>(answers: &[A], paragraphs: &[P]) -> Option<usize> {
    (0..paragraphs.len())
        .find(|&i| answer_recall_at_k(answers, &paragraphs[i..=i], 1))
        .map(|i| i + 1)
}

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

pub fn is_stopword(word: &str) -> bool {
    stopwords().contains(word)
}

pub fn content_words(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().filter(|w| !is_stopword(w)).collect()
}

/// Best fraction of the gold passage's content words found in any one
/// paragraph. A gold passage without content words scores 0.
pub fn max_word_overlap<P: AsRef<str>>(gold: &str, paragraphs: &[P]) -> f64 {
    let gold_words = content_words(gold);
    if gold_words.is_empty() {
        tracing::warn!("gold evidence has no content words; overlap defined as 0");
        return 0.0;
    }
    paragraphs
        .iter()
        .map(|p| {
            let words = content_words(p.as_ref());
            gold_words.intersection(&words).count() as f64 / gold_words.len() as f64
        })
        .fold(0.0, f64::max)
}

/// The normalized prediction occurs inside the normalized source paragraph.
pub fn extractiveness(prediction: &str, source_paragraph: &str) -> bool {
    let p = normalize_answer(prediction);
    !p.is_empty() && normalize_answer(source_paragraph).contains(&p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub answer: String,
    /// Paragraph the answer was generated from, when there was one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_paragraph: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub id: String,
    pub prediction: String,
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall_hit: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub word_overlap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extractive: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub n_questions: usize,
    pub metric_name: String,
    pub metric_value: f64,
    /// Depth used for the recall column.
    pub recall_k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieval_recall_at_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_word_overlap_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extractiveness: Option<f64>,
    pub per_question: Vec<QuestionOutcome>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn rate(flags: impl Iterator<Item = bool>) -> Option<f64> {
    mean(flags.map(|b| if b { 1.0 } else { 0.0 }))
}

/// Score `predictions` against `records`.
///
/// `paragraphs` maps question ids to the conditioning paragraphs in rank
/// order; questions without an entry get no retrieval columns. Every
/// prediction must name a known question; questions without a prediction
/// are left out of the report.
pub fn evaluate(
    dataset_id: &str,
    records: &[QuestionRecord],
    predictions: &[Prediction],
    paragraphs: &BTreeMap<String, Vec<String>>,
    recall_k: usize,
) -> Result<EvalReport> {
    if recall_k == 0 {
        return Err(Error::InvalidArgument("recall k must be at least 1".into()));
    }
    let by_id: BTreeMap<&str, &QuestionRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let unknown: Vec<&str> = predictions
        .iter()
        .map(|p| p.id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::IdMismatch(format!(
            "predictions for unknown question ids: {}",
            unknown.join(", ")
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("no predictions to evaluate".into()));
    }
    let mut outcomes = Vec::with_capacity(predictions.len());
    let mut metric_name = "exact_match";
    for pred in predictions {
        let record = by_id[pred.id.as_str()];
        let paras = paragraphs.get(&pred.id);
        let outcome = match &record.target {
            Target::Answers(answers) => QuestionOutcome {
                id: pred.id.clone(),
                prediction: pred.answer.clone(),
                correct: exact_match(&pred.answer, answers),
                recall_hit: paras.map(|p| answer_recall_at_k(answers, p, recall_k)),
                word_overlap: None,
                extractive: pred
                    .source_paragraph
                    .as_deref()
                    .map(|s| extractiveness(&pred.answer, s)),
            },
            Target::Label { gold, label_set } => {
                metric_name = "accuracy";
                let gold_text = record.gold_evidence.join(" ");
                QuestionOutcome {
                    id: pred.id.clone(),
                    prediction: pred.answer.clone(),
                    correct: accuracy(&pred.answer, gold, label_set)?,
                    recall_hit: None,
                    word_overlap: match paras {
                        Some(p) if !record.gold_evidence.is_empty() => Some(max_word_overlap(&gold_text, p)),
                        _ => None,
                    },
                    extractive: None,
                }
            }
        };
        outcomes.push(outcome);
    }
    Ok(EvalReport {
        dataset_id: dataset_id.to_string(),
        n_questions: outcomes.len(),
        metric_name: metric_name.to_string(),
        metric_value: rate(outcomes.iter().map(|o| o.correct)).unwrap_or(0.0),
        recall_k,
        retrieval_recall_at_k: rate(outcomes.iter().filter_map(|o| o.recall_hit)),
        max_word_overlap_mean: mean(outcomes.iter().filter_map(|o| o.word_overlap)),
        extractiveness: rate(outcomes.iter().filter_map(|o| o.extractive)),
        per_question: outcomes,
    })
}

impl EvalReport {
    /// One-screen summary: metric, retrieval column, extractiveness.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let mut row = |name: &str, value: String| {
            let _ = writeln!(out, "{name:<22}{value}");
        };
        row("dataset", self.dataset_id.clone());
        row("questions", self.n_questions.to_string());
        row(&self.metric_name, format!("{:.4}", self.metric_value));
        if let Some(r) = self.retrieval_recall_at_k {
            row(&format!("answer recall@{}", self.recall_k), format!("{r:.4}"));
        }
        if let Some(w) = self.max_word_overlap_mean {
            row("max word overlap", format!("{w:.4}"));
        }
        if let Some(e) = self.extractiveness {
            row("extractive answers", format!("{e:.4}"));
        }
        out
    }
}
