//! Candidate pools, score bundles and answer selection.
//!
//! Every candidate carries five log terms:
//!
//! | term       | quantity                 |
//! |------------|--------------------------|
//! | `lp_a_qp`  | log p(answer \| question, paragraph) |
//! | `lp_q_ap`  | log p(question \| answer, paragraph) |
//! | `lp_a_p`   | log p(answer \| paragraph)           |
//! | `lp_q_p`   | log p(question \| paragraph)         |
//! | `lp_prior` | log of the paragraph's retrieval prior |
//!
//! and a factorization turns them into a ranking.

mod collect;
mod tune;

pub use collect::{
    collect_closed_book, collect_open_book, CallPurpose, CallRecord, CollectSettings, PromptSet,
};
pub use tune::{tune_weights, TraceRow, TuneResult, WEIGHT_GRID, WEIGHT_SWEEPS};

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::error::{Error, Result};
use crate::eval::normalize_answer;

/// Floor applied to priors before taking logs, so a zero prior stays finite.
pub const PRIOR_FLOOR: f64 = 1e-12;

pub const TERM_NAMES: [&str; 5] = ["lp_a_qp", "lp_q_ap", "lp_a_p", "lp_q_p", "lp_prior"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Factorization {
    AnswerProb,
    Rag,
    NoisyChannel,
    Poe,
}

impl Factorization {
    pub const ALL: [Factorization; 4] = [
        Factorization::AnswerProb,
        Factorization::Rag,
        Factorization::NoisyChannel,
        Factorization::Poe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Factorization::AnswerProb => "answer-prob",
            Factorization::Rag => "rag",
            Factorization::NoisyChannel => "noisy-channel",
            Factorization::Poe => "poe",
        }
    }

    /// Whether the factorization reads the scorer-prompt terms.
    pub fn needs_scorer_prompts(self) -> bool {
        matches!(self, Factorization::NoisyChannel | Factorization::Poe)
    }
}

impl fmt::Display for Factorization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Factorization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('_', "-");
        Factorization::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown scorer {s:?} (expected answer-prob, rag, noisy-channel or poe)"
                ))
            })
    }
}

/// PoE interpolation weights in [`TERM_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights(pub [f64; 5]);

impl Default for Weights {
    fn default() -> Self {
        Weights([1.0; 5])
    }
}

impl Weights {
    pub fn new(w: [f64; 5]) -> Result<Self> {
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weights must be finite and non-negative, got {w:?}"
            )));
        }
        if w.iter().all(|x| *x == 0.0) {
            return Err(Error::InvalidArgument("weights must not all be zero".into()));
        }
        Ok(Weights(w))
    }

    pub fn one_hot(term: usize) -> Self {
        let mut w = [0.0; 5];
        w[term] = 1.0;
        Weights(w)
    }
}

impl FromStr for Weights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 5 {
            return Err(Error::InvalidArgument(format!(
                "expected 5 comma-separated weights ({}), got {s:?}",
                TERM_NAMES.join(",")
            )));
        }
        let mut w = [0.0; 5];
        for (slot, part) in w.iter_mut().zip(parts) {
            *slot = part
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad weight {part:?}")))?;
        }
        Weights::new(w)
    }
}

impl fmt::Display for Weights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|w| w.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig {
    pub factorization: Factorization,
    pub weights: Weights,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            factorization: Factorization::Poe,
            weights: Weights::default(),
        }
    }
}

impl RerankConfig {
    pub fn new(factorization: Factorization) -> Self {
        RerankConfig {
            factorization,
            weights: Weights::default(),
        }
    }

    pub fn poe(weights: Weights) -> Self {
        RerankConfig {
            factorization: Factorization::Poe,
            weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAnswer {
    /// Sampled text with surrounding whitespace removed.
    pub raw_text: String,
    pub canon_text: String,
    pub paragraph_index: usize,
    pub sample_logprob: f64,
}

impl CandidateAnswer {
    pub fn new(raw: &str, paragraph_index: usize, sample_logprob: f64) -> Self {
        let raw_text = raw.trim().to_string();
        CandidateAnswer {
            canon_text: normalize_answer(&raw_text),
            raw_text,
            paragraph_index,
            sample_logprob,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreBundle {
    pub lp_a_qp: f64,
    pub lp_q_ap: f64,
    pub lp_a_p: f64,
    pub lp_q_p: f64,
    pub lp_prior: f64,
}

impl ScoreBundle {
    pub fn terms(&self) -> [f64; 5] {
        [
            self.lp_a_qp,
            self.lp_q_ap,
            self.lp_a_p,
            self.lp_q_p,
            self.lp_prior,
        ]
    }

    pub fn noisy_channel(&self) -> f64 {
        self.lp_q_ap + self.lp_a_p - self.lp_q_p
    }

    pub fn poe(&self, weights: &Weights) -> f64 {
        self.terms()
            .iter()
            .zip(weights.0)
            .map(|(t, w)| if w == 0.0 { 0.0 } else { w * t })
            .sum()
    }
}

pub fn log_prior(prior: f64) -> f64 {
    prior.max(PRIOR_FLOOR).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    #[serde(flatten)]
    pub candidate: CandidateAnswer,
    #[serde(flatten)]
    pub bundle: ScoreBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub question_id: String,
    pub task: Task,
    /// Retrieval prior of each paragraph, by paragraph index.
    pub priors: Vec<f64>,
    /// Text of each paragraph, by paragraph index.
    pub paragraphs: Vec<String>,
    pub candidates: Vec<ScoredCandidate>,
    /// Paragraphs whose prompts could not be fitted to the context window.
    #[serde(default)]
    pub skipped_paragraphs: Vec<usize>,
    #[serde(default)]
    pub calls: Vec<CallRecord>,
}

impl CandidatePool {
    /// Only the first `n` paragraphs, with their candidates and calls.
    pub fn truncated(&self, n: usize) -> CandidatePool {
        CandidatePool {
            question_id: self.question_id.clone(),
            task: self.task,
            priors: self.priors.iter().take(n).copied().collect(),
            paragraphs: self.paragraphs.iter().take(n).cloned().collect(),
            candidates: self
                .candidates
                .iter()
                .filter(|c| c.candidate.paragraph_index < n)
                .cloned()
                .collect(),
            skipped_paragraphs: self
                .skipped_paragraphs
                .iter()
                .copied()
                .filter(|&p| p < n)
                .collect(),
            calls: self
                .calls
                .iter()
                .filter(|c| c.paragraph.is_none_or(|p| p < n))
                .cloned()
                .collect(),
        }
    }
}

/// One ranked answer in the selection diagnostics. For RAG this is a group
/// of candidates sharing a normalized form, represented by its best member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAnswer {
    pub raw_text: String,
    pub canon_text: String,
    pub paragraph_index: usize,
    pub lp_a_qp: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub answer: String,
    pub canon_text: String,
    pub paragraph_index: usize,
    pub score: f64,
    pub factorization: Factorization,
    /// Every candidate (or answer group) in rank order.
    pub ranking: Vec<RankedAnswer>,
}

/// Total order: higher score, higher lp_a_qp, lower paragraph index,
/// then canonical and raw text ascending.
fn rank_order(a: &RankedAnswer, b: &RankedAnswer) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.lp_a_qp.total_cmp(&a.lp_a_qp))
        .then(a.paragraph_index.cmp(&b.paragraph_index))
        .then_with(|| a.canon_text.cmp(&b.canon_text))
        .then_with(|| a.raw_text.cmp(&b.raw_text))
}

fn ranked(c: &ScoredCandidate, score: f64) -> RankedAnswer {
    RankedAnswer {
        raw_text: c.candidate.raw_text.clone(),
        canon_text: c.candidate.canon_text.clone(),
        paragraph_index: c.candidate.paragraph_index,
        lp_a_qp: c.bundle.lp_a_qp,
        score,
    }
}

/// log of sum of exp, ignoring -inf terms.
fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// RAG: log sum over paragraphs of prior times the probability of the
/// paragraph's best sample of the answer. Paragraphs that never produced the
/// answer contribute nothing.
fn rag_ranking(pool: &CandidatePool) -> Result<Vec<RankedAnswer>> {
    use std::collections::BTreeMap;
    // canon -> paragraph -> best candidate
    let mut groups: BTreeMap<&str, BTreeMap<usize, &ScoredCandidate>> = BTreeMap::new();
    for c in &pool.candidates {
        let slot = groups
            .entry(c.candidate.canon_text.as_str())
            .or_default()
            .entry(c.candidate.paragraph_index)
            .or_insert(c);
        if c.bundle.lp_a_qp > slot.bundle.lp_a_qp
            || (c.bundle.lp_a_qp == slot.bundle.lp_a_qp && c.candidate.raw_text < slot.candidate.raw_text)
        {
            *slot = c;
        }
    }
    groups
        .into_values()
        .map(|per_paragraph| {
            let mut terms = Vec::with_capacity(per_paragraph.len());
            for (&i, c) in &per_paragraph {
                let prior = *pool.priors.get(i).ok_or_else(|| Error::InvalidRecord {
                    id: pool.question_id.clone(),
                    message: format!("candidate cites paragraph {i} without a prior"),
                })?;
                if prior > 0.0 {
                    terms.push(prior.ln() + c.bundle.lp_a_qp);
                }
            }
            let score = log_sum_exp(&terms);
            let best = per_paragraph
                .values()
                .map(|c| ranked(c, score))
                .min_by(rank_order)
                .expect("group is non-empty");
            Ok(best)
        })
        .collect()
}

/// Rank the pool under `config` and return the winner with diagnostics.
/// Scores are in log space.
pub fn select_answer(pool: &CandidatePool, config: &RerankConfig) -> Result<Selection> {
    if pool.candidates.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut ranking: Vec<RankedAnswer> = match config.factorization {
        Factorization::Rag => rag_ranking(pool)?,
        f => pool
            .candidates
            .iter()
            .map(|c| {
                let score = match f {
                    Factorization::AnswerProb => c.bundle.lp_a_qp,
                    Factorization::NoisyChannel => c.bundle.noisy_channel(),
                    _ => c.bundle.poe(&config.weights),
                };
                ranked(c, score)
            })
            .collect(),
    };
    ranking.sort_by(rank_order);
    let top = &ranking[0];
    Ok(Selection {
        answer: top.raw_text.clone(),
        canon_text: top.canon_text.clone(),
        paragraph_index: top.paragraph_index,
        score: top.score,
        factorization: config.factorization,
        ranking,
    })
}
