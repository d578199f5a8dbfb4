use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chunkrank::{DEFAULT_CHUNK_SENTENCES, DEFAULT_TOP_PARAGRAPHS};
use crate::corpus::{DEFAULT_HELDOUT_FRACTION, DEFAULT_SHOTS};
use crate::error::{Error, Result};
use crate::lm::{
    GenerationParams, DEFAULT_CLOSED_BOOK_SAMPLES, DEFAULT_MAX_NEW_TOKENS, DEFAULT_NUCLEUS_P,
    DEFAULT_SAMPLES_PER_PARAGRAPH, DEFAULT_TEMPERATURE,
};
use crate::rerank::{Factorization, Weights};
use crate::websearch::DEFAULT_TOP_URLS;

/// Where the conditioning paragraphs come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    OpenBookSearch,
    /// The record's gold passages, verbatim, with uniform priors.
    OpenBookGold,
    ClosedBook,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::OpenBookSearch => "open_book_search",
            Mode::OpenBookGold => "open_book_gold",
            Mode::ClosedBook => "closed_book",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        [Mode::OpenBookSearch, Mode::OpenBookGold, Mode::ClosedBook]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// In-process character n-gram model; deterministic and offline.
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Base URL of an HTTP backend.
    pub url: Option<String>,
    /// Mock only; HTTP backends describe themselves.
    pub name: String,
    pub param_count: u64,
    pub context_tokens: usize,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            url: None,
            name: "mock".into(),
            param_count: 280_000_000_000,
            context_tokens: 2048,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchKind {
    /// Google Custom Search; credentials from the environment.
    #[default]
    Google,
    /// A fixture directory standing in for the search engine and the web.
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub kind: SearchKind,
    pub fixture_dir: Option<PathBuf>,
    pub timeout_secs: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            kind: SearchKind::Google,
            fixture_dir: None,
            timeout_secs: 30,
        }
    }
}

/// Everything a run needs. Defaults are the reference configuration:
/// search-conditioned PoE reranking over the top 50 paragraphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Line-delimited question records.
    pub dataset: PathBuf,
    /// Selects the prompt banks.
    pub dataset_id: String,
    /// Bank files overriding the shipped ones.
    pub banks: Option<PathBuf>,
    pub backend: BackendConfig,
    pub mode: Mode,
    pub search: SearchConfig,
    pub top_urls: usize,
    pub chunk_sentences: usize,
    pub top_paragraphs: usize,
    pub shots: usize,
    pub nucleus_p: f64,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub samples_per_paragraph: usize,
    pub closed_book_samples: usize,
    pub heldout_fraction: f64,
    pub scorer: Factorization,
    /// Fixed PoE weights; unset means tuned weights if present, else all ones.
    pub weights: Option<Weights>,
    pub seed: u64,
    pub cache: PathBuf,
    pub offline: bool,
    pub workers: usize,
    /// Paragraph counts for the cost table.
    pub cost_sweep: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("data/questions.jsonl"),
            dataset_id: "nq".into(),
            banks: None,
            backend: BackendConfig::default(),
            mode: Mode::OpenBookSearch,
            search: SearchConfig::default(),
            top_urls: DEFAULT_TOP_URLS,
            chunk_sentences: DEFAULT_CHUNK_SENTENCES,
            top_paragraphs: DEFAULT_TOP_PARAGRAPHS,
            shots: DEFAULT_SHOTS,
            nucleus_p: DEFAULT_NUCLEUS_P,
            temperature: DEFAULT_TEMPERATURE,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            samples_per_paragraph: DEFAULT_SAMPLES_PER_PARAGRAPH,
            closed_book_samples: DEFAULT_CLOSED_BOOK_SAMPLES,
            heldout_fraction: DEFAULT_HELDOUT_FRACTION,
            scorer: Factorization::Poe,
            weights: None,
            seed: 0,
            cache: PathBuf::from("openbook-cache"),
            offline: false,
            workers: 8,
            cost_sweep: vec![1, 5, 10, 20, 50],
        }
    }
}

impl RunConfig {
    /// Parse a TOML file; missing keys take their defaults. Relative paths
    /// in the file are resolved against the file's directory.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut config = Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{}: {m}", path.display())),
            e => e,
        })?;
        if let Some(base) = path.parent() {
            let rebase = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            rebase(&mut config.dataset);
            rebase(&mut config.cache);
            config.banks.as_mut().map(rebase);
            config.search.fixture_dir.as_mut().map(rebase);
        }
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            nucleus_p: self.nucleus_p,
            temperature: self.temperature,
            max_new_tokens: self.max_new_tokens,
            n_samples: self.samples_per_paragraph,
            ..GenerationParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        self.generation_params().validate()?;
        if self.top_urls == 0 || self.chunk_sentences == 0 || self.top_paragraphs == 0 {
            return bad("top_urls, chunk_sentences and top_paragraphs must be at least 1");
        }
        if self.shots == 0 || self.closed_book_samples == 0 || self.workers == 0 {
            return bad("shots, closed_book_samples and workers must be at least 1");
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return bad("heldout_fraction must be in (0, 1)");
        }
        if let Some(w) = self.weights {
            Weights::new(w.0)?;
        }
        if self.cost_sweep.is_empty() || self.cost_sweep.contains(&0) {
            return bad("cost_sweep needs at least one positive paragraph count");
        }
        if self.backend.kind == BackendKind::Http && self.backend.url.is_none() {
            return bad("backend.url is required for the http backend");
        }
        if self.mode == Mode::OpenBookSearch
            && self.search.kind == SearchKind::Fixture
            && self.search.fixture_dir.is_none()
        {
            return bad("search.fixture_dir is required for fixture search");
        }
        Ok(())
    }
}
