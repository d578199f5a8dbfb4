//! Sampling candidates and scoring their bundles with the model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{log_prior, CandidateAnswer, CandidatePool, Factorization, ScoreBundle, ScoredCandidate};
use crate::chunkrank::RankedParagraph;
use crate::corpus::{BankLibrary, PromptBank, PromptKind, QuestionRecord, Target};
use crate::error::{Error, Result};
use crate::lm::{label_distribution, GenerationParams, LanguageModel, DEFAULT_CLOSED_BOOK_SAMPLES};
use crate::prompting::{
    fit_to_context, render_closed_book_prompt, render_qa_prompt, render_scorer_prompt, RenderedPrompt,
};

/// The banks one dataset needs.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub qa: PromptBank,
    pub q_given_ap: PromptBank,
    pub q_given_p: PromptBank,
    pub a_given_p: PromptBank,
}

impl PromptSet {
    pub fn load(library: &BankLibrary, dataset_id: &str) -> Result<Self> {
        Ok(PromptSet {
            qa: library.get(dataset_id, PromptKind::Qa)?,
            q_given_ap: library.get(dataset_id, PromptKind::QGivenAp)?,
            q_given_p: library.get(dataset_id, PromptKind::QGivenP)?,
            a_given_p: library.get(dataset_id, PromptKind::AGivenP)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectSettings {
    /// Decoding for open-book sampling; `n_samples` is per paragraph.
    pub params: GenerationParams,
    pub closed_book_samples: usize,
    pub seed: u64,
}

impl Default for CollectSettings {
    fn default() -> Self {
        CollectSettings {
            params: GenerationParams::default(),
            closed_book_samples: DEFAULT_CLOSED_BOOK_SAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallPurpose {
    /// Open-book answer sampling or label scoring with the qa prompt.
    Answer,
    /// Question-only sampling.
    ClosedBook,
    QGivenAp,
    QGivenP,
    AGivenP,
}

impl CallPurpose {
    /// Whether ranking with `f` depends on this call.
    pub fn used_by(self, f: Factorization) -> bool {
        match self {
            CallPurpose::Answer | CallPurpose::ClosedBook => true,
            _ => f.needs_scorer_prompts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub purpose: CallPurpose,
    pub paragraph: Option<usize>,
    pub prompt_tokens: u64,
    pub generated_tokens: u64,
}

struct Recorder<'a> {
    lm: &'a dyn LanguageModel,
    paragraph: Option<usize>,
    calls: Vec<CallRecord>,
}

impl<'a> Recorder<'a> {
    fn log(&mut self, purpose: CallPurpose, prompt: &str, generated: u64) -> Result<()> {
        let prompt_tokens = self.lm.count_tokens(prompt)? as u64;
        self.calls.push(CallRecord {
            purpose,
            paragraph: self.paragraph,
            prompt_tokens,
            generated_tokens: generated,
        });
        Ok(())
    }

    fn fit(&self, prompt: RenderedPrompt, reserve: usize) -> Result<RenderedPrompt> {
        let window = self.lm.descriptor().context_tokens;
        if reserve >= window {
            return Err(Error::ContextOverflow { budget: window });
        }
        fit_to_context(&prompt, window - reserve, &TokensOf(self.lm))
    }

    fn sample(
        &mut self,
        purpose: CallPurpose,
        prompt: RenderedPrompt,
        params: &GenerationParams,
        seed: u64,
    ) -> Result<Vec<crate::lm::Sample>> {
        let prompt = self.fit(prompt, params.max_new_tokens)?;
        let samples = self.lm.sample(&prompt.text, params, seed)?;
        let generated = samples.iter().map(|s| s.token_count as u64).sum();
        self.log(purpose, &prompt.text, generated)?;
        Ok(samples)
    }

    fn score(&mut self, purpose: CallPurpose, prompt: RenderedPrompt, value: &str) -> Result<f64> {
        let continuation = format!(" {value}");
        let cont_tokens = self.lm.count_tokens(&continuation)?;
        let prompt = self.fit(prompt, cont_tokens)?;
        let lp = self.lm.score_continuation(&prompt.text, &continuation)?;
        self.log(purpose, &prompt.text, cont_tokens as u64)?;
        Ok(lp)
    }

    fn labels(
        &mut self,
        purpose: CallPurpose,
        prompt: RenderedPrompt,
        labels: &[String],
    ) -> Result<Vec<f64>> {
        let widest = labels
            .iter()
            .map(|l| self.lm.count_tokens(&format!(" {l}")))
            .collect::<Result<Vec<_>>>()?;
        let prompt = self.fit(prompt, widest.iter().copied().max().unwrap_or(0))?;
        let dist = label_distribution(self.lm, &prompt.text, labels)?;
        for t in widest {
            self.log(purpose, &prompt.text, t as u64)?;
        }
        Ok(dist.into_iter().map(f64::ln).collect())
    }
}

struct TokensOf<'a>(&'a dyn LanguageModel);

impl crate::prompting::TokenCounter for TokensOf<'_> {
    fn count_tokens(&self, text: &str) -> Result<usize> {
        self.0.count_tokens(text)
    }
}

struct ParagraphOutcome {
    candidates: Vec<ScoredCandidate>,
    calls: Vec<CallRecord>,
    skipped: bool,
}

fn first_seen(values: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn open_book_paragraph(
    lm: &dyn LanguageModel,
    prompts: &PromptSet,
    record: &QuestionRecord,
    index: usize,
    paragraph: &RankedParagraph,
    settings: &CollectSettings,
) -> Result<ParagraphOutcome> {
    let mut rec = Recorder {
        lm,
        paragraph: Some(index),
        calls: Vec::new(),
    };
    let evidence = paragraph.paragraph.text.as_str();
    let question = record.question.as_str();
    let lp_prior = log_prior(paragraph.prior);
    let scorer = |kind: PromptKind, bank: &PromptBank, answer: Option<&str>| {
        render_scorer_prompt(kind, bank, Some(evidence), Some(question), answer)
    };

    let attempt = |rec: &mut Recorder| -> Result<Vec<ScoredCandidate>> {
        let qa = render_qa_prompt(&prompts.qa, evidence, question)?;
        // (candidate, lp_a_qp) pairs plus the distinct answers to score
        let (drawn, answers): (Vec<CandidateAnswer>, Vec<String>) = match &record.target {
            Target::Answers(_) => {
                let samples = rec.sample(CallPurpose::Answer, qa, &settings.params, settings.seed)?;
                let drawn: Vec<CandidateAnswer> = samples
                    .iter()
                    .filter(|s| !s.text.trim().is_empty())
                    .map(|s| CandidateAnswer::new(&s.text, index, s.logprob))
                    .collect();
                let answers = first_seen(drawn.iter().map(|c| c.raw_text.clone()));
                (drawn, answers)
            }
            Target::Label { label_set, .. } => {
                let lps = rec.labels(CallPurpose::Answer, qa, label_set)?;
                let drawn = label_set
                    .iter()
                    .zip(lps)
                    .map(|(l, lp)| CandidateAnswer::new(l, index, lp))
                    .collect();
                (drawn, label_set.clone())
            }
        };
        if drawn.is_empty() {
            return Ok(Vec::new());
        }
        let mut lp_q_ap = Vec::with_capacity(answers.len());
        for a in &answers {
            let p = scorer(PromptKind::QGivenAp, &prompts.q_given_ap, Some(a))?;
            lp_q_ap.push(rec.score(CallPurpose::QGivenAp, p, question)?);
        }
        let a_prompt = scorer(PromptKind::AGivenP, &prompts.a_given_p, None)?;
        let lp_a_p: Vec<f64> = match &record.target {
            Target::Answers(_) => answers
                .iter()
                .map(|a| rec.score(CallPurpose::AGivenP, a_prompt.clone(), a))
                .collect::<Result<_>>()?,
            Target::Label { label_set, .. } => rec.labels(CallPurpose::AGivenP, a_prompt, label_set)?,
        };
        let q_prompt = scorer(PromptKind::QGivenP, &prompts.q_given_p, None)?;
        let lp_q_p = rec.score(CallPurpose::QGivenP, q_prompt, question)?;
        Ok(drawn
            .into_iter()
            .map(|c| {
                let j = answers
                    .iter()
                    .position(|a| *a == c.raw_text)
                    .expect("answer was scored");
                ScoredCandidate {
                    bundle: ScoreBundle {
                        lp_a_qp: c.sample_logprob,
                        lp_q_ap: lp_q_ap[j],
                        lp_a_p: lp_a_p[j],
                        lp_q_p,
                        lp_prior,
                    },
                    candidate: c,
                }
            })
            .collect())
    };

    match attempt(&mut rec) {
        Ok(candidates) => Ok(ParagraphOutcome {
            candidates,
            calls: rec.calls,
            skipped: false,
        }),
        Err(Error::ContextOverflow { budget }) => {
            tracing::warn!(question = %record.id, paragraph = index, budget, "prompt does not fit; paragraph skipped");
            Ok(ParagraphOutcome {
                candidates: Vec::new(),
                calls: rec.calls,
                skipped: true,
            })
        }
        Err(e) => Err(e),
    }
}

/// Sample (or label-score) every paragraph and score each distinct answer
/// with the scorer prompts.
pub fn collect_open_book(
    lm: &dyn LanguageModel,
    prompts: &PromptSet,
    record: &QuestionRecord,
    ranked: &[RankedParagraph],
    settings: &CollectSettings,
) -> Result<CandidatePool> {
    if ranked.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "question {} has no paragraphs",
            record.id
        )));
    }
    let outcomes = ranked
        .par_iter()
        .enumerate()
        .map(|(i, p)| open_book_paragraph(lm, prompts, record, i, p, settings))
        .collect::<Result<Vec<_>>>()?;
    let mut pool = CandidatePool {
        question_id: record.id.clone(),
        task: record.task(),
        priors: ranked.iter().map(|p| p.prior).collect(),
        paragraphs: ranked.iter().map(|p| p.paragraph.text.clone()).collect(),
        candidates: Vec::new(),
        skipped_paragraphs: Vec::new(),
        calls: Vec::new(),
    };
    for (i, outcome) in outcomes.into_iter().enumerate() {
        pool.candidates.extend(outcome.candidates);
        pool.calls.extend(outcome.calls);
        if outcome.skipped {
            pool.skipped_paragraphs.push(i);
        }
    }
    Ok(pool)
}

/// Question-only prompting: many samples (or one label distribution) with
/// answer probability as the only score.
pub fn collect_closed_book(
    lm: &dyn LanguageModel,
    qa_bank: &PromptBank,
    record: &QuestionRecord,
    settings: &CollectSettings,
) -> Result<CandidatePool> {
    let mut rec = Recorder {
        lm,
        paragraph: None,
        calls: Vec::new(),
    };
    let prompt = render_closed_book_prompt(qa_bank, &record.question)?;
    let drawn: Vec<CandidateAnswer> = match &record.target {
        Target::Answers(_) => {
            let params = settings.params.clone().with_samples(settings.closed_book_samples);
            rec.sample(CallPurpose::ClosedBook, prompt, &params, settings.seed)?
                .iter()
                .filter(|s| !s.text.trim().is_empty())
                .map(|s| CandidateAnswer::new(&s.text, 0, s.logprob))
                .collect()
        }
        Target::Label { label_set, .. } => {
            let lps = rec.labels(CallPurpose::ClosedBook, prompt, label_set)?;
            label_set
                .iter()
                .zip(lps)
                .map(|(l, lp)| CandidateAnswer::new(l, 0, lp))
                .collect()
        }
    };
    Ok(CandidatePool {
        question_id: record.id.clone(),
        task: record.task(),
        priors: vec![1.0],
        paragraphs: vec![String::new()],
        candidates: drawn
            .into_iter()
            .map(|c| ScoredCandidate {
                bundle: ScoreBundle {
                    lp_a_qp: c.sample_logprob,
                    ..ScoreBundle::default()
                },
                candidate: c,
            })
            .collect(),
        skipped_paragraphs: Vec::new(),
        calls: rec.calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunkrank::{rank_paragraphs, EvidenceParagraph};
    use crate::lm::{BackendDescriptor, MockBackend};
    use crate::rerank::{select_answer, RerankConfig};

    fn mock() -> MockBackend {
        MockBackend::new(BackendDescriptor::new("mock", 1000, 2048).unwrap())
    }

    fn ranked(n: usize) -> Vec<RankedParagraph> {
        let paras: Vec<_> = (0..n)
            .map(|i| {
                EvidenceParagraph::new(
                    "u",
                    i + 1,
                    0,
                    vec![format!("The tiger {i} is named Richard Parker.")],
                )
            })
            .collect();
        rank_paragraphs("what is the tigers name", &paras, 50)
            .unwrap()
            .paragraphs
    }

    fn prompts() -> PromptSet {
        PromptSet::load(&BankLibrary::builtin(), "nq").unwrap()
    }

    #[test]
    fn pool_shape_and_call_log() {
        let record = QuestionRecord::generation("q1", "what is the tigers name", ["Richard Parker"]).unwrap();
        let settings = CollectSettings {
            params: GenerationParams::default().with_samples(2),
            ..CollectSettings::default()
        };
        let pool = collect_open_book(&mock(), &prompts(), &record, &ranked(3), &settings).unwrap();
        assert!(pool.candidates.len() <= 6);
        assert!(pool.candidates.iter().all(|c| c.candidate.paragraph_index < 3));
        let answer_calls = pool
            .calls
            .iter()
            .filter(|c| c.purpose == CallPurpose::Answer)
            .count();
        assert_eq!(answer_calls, 3);
        for c in &pool.candidates {
            assert_eq!(
                c.bundle.lp_prior,
                log_prior(pool.priors[c.candidate.paragraph_index])
            );
            assert!(c.bundle.terms().iter().all(|t| t.is_finite()));
        }
        let again = collect_open_book(&mock(), &prompts(), &record, &ranked(3), &settings).unwrap();
        assert_eq!(again, pool);
    }

    #[test]
    fn same_answer_everywhere() {
        let record = QuestionRecord::generation("q1", "what is the tigers name", ["Richard Parker"]).unwrap();
        let paragraphs = ranked(50);
        let ps = prompts();
        let mut m = mock();
        for p in &paragraphs {
            let qa = render_qa_prompt(&ps.qa, &p.paragraph.text, &record.question).unwrap();
            m = m.with_sample(&qa.text, " Richard Parker", -0.5);
        }
        let pool = collect_open_book(&m, &ps, &record, &paragraphs, &CollectSettings::default()).unwrap();
        assert_eq!(pool.candidates.len(), 200);
        let distinct: std::collections::BTreeSet<_> =
            pool.candidates.iter().map(|c| &c.candidate.canon_text).collect();
        assert_eq!(distinct.len(), 1);
    }

    #[test]
    fn closed_book_draws_two_hundred() {
        let record =
            QuestionRecord::generation("q1", "what is the tigers name in life of pi", ["Richard Parker"])
                .unwrap();
        let pool = collect_closed_book(&mock(), &prompts().qa, &record, &CollectSettings::default()).unwrap();
        let call = &pool.calls[0];
        assert_eq!(call.purpose, CallPurpose::ClosedBook);
        assert!(pool.candidates.len() <= 200);
        let sel = select_answer(&pool, &RerankConfig::new(Factorization::AnswerProb)).unwrap();
        let best = pool
            .candidates
            .iter()
            .map(|c| c.bundle.lp_a_qp)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(sel.score, best);
    }

    #[test]
    fn classification_pool_has_every_label_per_paragraph() {
        let record = QuestionRecord::classification(
            "c1",
            "Is the tiger named Richard Parker?",
            "true",
            ["true", "false"],
        )
        .unwrap();
        let lib = BankLibrary::builtin();
        let ps = PromptSet::load(&lib, "strategyqa").unwrap();
        let pool = collect_open_book(&mock(), &ps, &record, &ranked(3), &CollectSettings::default()).unwrap();
        assert_eq!(pool.candidates.len(), 6);
        for p in 0..3 {
            let total: f64 = pool
                .candidates
                .iter()
                .filter(|c| c.candidate.paragraph_index == p)
                .map(|c| c.bundle.lp_a_qp.exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn oversized_paragraph_is_skipped() {
        let record = QuestionRecord::generation("q1", "what is the tigers name", ["Richard Parker"]).unwrap();
        let tiny = MockBackend::new(BackendDescriptor::new("tiny", 1000, 40).unwrap());
        let pool = collect_open_book(
            &tiny,
            &prompts(),
            &record,
            &ranked(2),
            &CollectSettings::default(),
        )
        .unwrap();
        assert_eq!(pool.skipped_paragraphs, [0, 1]);
        assert!(pool.candidates.is_empty());
    }
}
