//! Completion-model contract: sampling, continuation scoring, label
//! distributions and inference-cost accounting.

mod cached;
mod http;
mod mock;

pub use cached::CachedBackend;
pub use http::HttpBackend;
pub use mock::{mock_token_count, MockBackend};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::TokenCounter;

pub const DEFAULT_NUCLEUS_P: f64 = 0.8;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_MAX_NEW_TOKENS: usize = 32;
pub const DEFAULT_SAMPLES_PER_PARAGRAPH: usize = 4;
pub const DEFAULT_CLOSED_BOOK_SAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub nucleus_p: f64,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub stop_sequences: Vec<String>,
    pub n_samples: usize,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            nucleus_p: DEFAULT_NUCLEUS_P,
            temperature: DEFAULT_TEMPERATURE,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            stop_sequences: vec!["\n".to_string()],
            n_samples: DEFAULT_SAMPLES_PER_PARAGRAPH,
        }
    }
}

impl GenerationParams {
    pub fn with_samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return bad(format!("nucleus_p must be in (0, 1], got {}", self.nucleus_p));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.max_new_tokens == 0 || self.n_samples == 0 {
            return bad("max_new_tokens and n_samples must be at least 1".into());
        }
        if self.stop_sequences.iter().any(String::is_empty) {
            return bad("stop sequences must be non-empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Generated text, stop sequence excluded.
    pub text: String,
    /// Total log-probability of `text` given the prompt.
    pub logprob: f64,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub param_count: u64,
    pub context_tokens: usize,
}

impl BackendDescriptor {
    pub fn new(name: impl Into<String>, param_count: u64, context_tokens: usize) -> Result<Self> {
        if param_count == 0 || context_tokens == 0 {
            return Err(Error::InvalidArgument(
                "param_count and context_tokens must be positive".into(),
            ));
        }
        Ok(BackendDescriptor {
            name: name.into(),
            param_count,
            context_tokens,
        })
    }
}

pub trait LanguageModel: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn count_tokens(&self, text: &str) -> Result<usize>;

    /// Draw `params.n_samples` continuations of `prompt`. The same
    /// `(prompt, params, seed)` always yields the same samples.
    fn sample(&self, prompt: &str, params: &GenerationParams, seed: u64) -> Result<Vec<Sample>>;

    /// Log-probability of `continuation` directly following `prompt`.
    fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<f64>;

    fn supports_scoring(&self) -> bool {
        true
    }

    /// Runs in-process; never needs the network.
    fn is_local(&self) -> bool {
        false
    }
}

impl TokenCounter for dyn LanguageModel + '_ {
    fn count_tokens(&self, text: &str) -> Result<usize> {
        LanguageModel::count_tokens(self, text)
    }
}

/// Fail fast when a run needs scores the backend cannot provide.
pub fn require_scoring(lm: &dyn LanguageModel) -> Result<()> {
    if lm.supports_scoring() {
        Ok(())
    } else {
        Err(Error::Capability(format!(
            "backend {} does not return log-probabilities",
            lm.descriptor().name
        )))
    }
}

/// Distribution over `labels` as a softmax of their continuation scores.
/// Each label is scored as `" " + label`, since prompts end on a bare cue.
pub fn label_distribution(lm: &dyn LanguageModel, prompt: &str, labels: &[String]) -> Result<Vec<f64>> {
    if labels.len() < 2 {
        return Err(Error::InvalidArgument("need at least two labels".into()));
    }
    let scores = labels
        .iter()
        .map(|l| lm.score_continuation(prompt, &format!(" {l}")))
        .collect::<Result<Vec<f64>>>()?;
    Ok(softmax(&scores))
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostReport {
    pub prompt_tokens: u64,
    pub generated_tokens: u64,
    /// 2 · parameters · tokens, exact.
    pub flops: u128,
}

impl CostReport {
    pub fn est_flops(&self) -> f64 {
        self.flops as f64
    }
}

/// Forward-pass cost of a batch of calls, each `(prompt_tokens, generated_tokens)`.
pub fn estimate_cost(calls: &[(u64, u64)], backend: &BackendDescriptor) -> CostReport {
    let mut report = CostReport::default();
    for &(prompt, generated) in calls {
        report.prompt_tokens += prompt;
        report.generated_tokens += generated;
    }
    let tokens = report.prompt_tokens as u128 + report.generated_tokens as u128;
    report.flops = 2 * backend.param_count as u128 * tokens;
    report
}
