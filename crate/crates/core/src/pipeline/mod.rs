//! Stage orchestration. Stages talk to each other only through files under
//! the cache root:
//!
//! ```text
//! <cache>/search, fetch, lm           request/response cache
//! <cache>/paragraphs/<fp>/<id>.json   ranked paragraphs per question
//! <cache>/pools/<mode>/<fp>/<id>.json candidate pools with score bundles
//! <cache>/pools/<mode>/<fp>/backend.json
//! <cache>/results/<mode>/             predictions.jsonl, rerank/, report.json,
//!                                     summary.txt, weights.json, trace.tsv, cost.tsv
//! ```
//!
//! `<fp>` is a digest of the settings that shaped the directory's contents,
//! so changing a setting never reuses stale files. Per-question files are
//! written once and skipped when present, which makes every stage resumable
//! and a warm re-run a no-op.

mod config;

pub use config::{BackendConfig, BackendKind, Mode, RunConfig, SearchConfig, SearchKind};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cache::{file_stem_for_id, read_json, write_if_changed, write_json_if_changed, Cache};
use crate::chunkrank::{chunk, rank_paragraphs, EvidenceParagraph, RankedParagraph};
use crate::corpus::{load_dataset, split_heldout, BankLibrary, DatasetFormat, QuestionRecord, Target};
use crate::error::{Error, Result};
use crate::eval::{accuracy, evaluate, exact_match, EvalReport, Prediction};
use crate::lm::{
    estimate_cost, require_scoring, BackendDescriptor, CachedBackend, HttpBackend, LanguageModel, MockBackend,
};
use crate::rerank::{
    collect_closed_book, collect_open_book, select_answer, tune_weights, CandidatePool, CollectSettings,
    Factorization, PromptSet, RerankConfig, Selection, TraceRow, Weights,
};
use crate::websearch::{
    FixtureWeb, GoogleCustomSearch, HttpFetcher, PageFetcher, SearchEngine, WebRetriever,
};

/// Share of questions allowed to fail in a stage before it reports failure.
pub const MAX_FAILURE_FRACTION: f64 = 0.10;

/// Ranked paragraphs for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParagraphFile {
    pub question_id: String,
    pub uniform_fallback: bool,
    pub paragraphs: Vec<RankedParagraph>,
    /// `(url, cause)` for search hits that could not be fetched.
    #[serde(default)]
    pub fetch_failures: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub total: usize,
    /// Questions computed in this invocation.
    pub computed: usize,
    /// Questions whose output was already on disk.
    pub reused: usize,
    /// `(question id, error)`.
    pub failed: Vec<(String, String)>,
}

impl StageReport {
    fn new(stage: &str, total: usize) -> Self {
        StageReport {
            stage: stage.to_string(),
            total,
            ..Self::default()
        }
    }

    fn check_threshold(&self) -> Result<()> {
        if self.failed.len() as f64 > MAX_FAILURE_FRACTION * self.total as f64 {
            return Err(Error::PartialFailure {
                stage: self.stage.clone(),
                failed: self.failed.len(),
                total: self.total,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedWeights {
    pub weights: Weights,
    pub metric: f64,
    pub heldout_ids: Vec<String>,
}

/// One point on the cost/quality curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub mode: Mode,
    pub scorer: Factorization,
    pub paragraphs: usize,
    pub metric: f64,
    pub prompt_tokens: u64,
    pub generated_tokens: u64,
    pub flops: u128,
}

pub const COST_HEADER: &str = "mode\tscorer\tparagraphs\tmetric\tprompt_tokens\tgenerated_tokens\tflops";

impl CostRow {
    pub fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.mode.as_str(),
            self.scorer,
            self.paragraphs,
            self.metric,
            self.prompt_tokens,
            self.generated_tokens,
            self.flops
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub stages: Vec<StageReport>,
    /// The configured mode first, then the closed-book baseline if it differs.
    pub reports: Vec<EvalReport>,
    pub cost: Vec<CostRow>,
}

fn fingerprint<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("fingerprint input serializes");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

pub fn task_metric(record: &QuestionRecord, answer: &str) -> Result<f64> {
    let hit = match &record.target {
        Target::Answers(answers) => exact_match(answer, answers),
        Target::Label { gold, label_set } => !answer.is_empty() && accuracy(answer, gold, label_set)?,
    };
    Ok(if hit { 1.0 } else { 0.0 })
}

pub struct Pipeline {
    config: RunConfig,
    records: Vec<QuestionRecord>,
    cache: Cache,
    web: Option<(Arc<dyn SearchEngine>, Arc<dyn PageFetcher>)>,
    lm: Option<Arc<dyn LanguageModel>>,
    workers: rayon::ThreadPool,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let records = load_dataset(&config.dataset, DatasetFormat::JsonLines)?;
        Self::with_records(config, records)
    }

    pub fn with_records(config: RunConfig, records: Vec<QuestionRecord>) -> Result<Self> {
        config.validate()?;
        if records.is_empty() {
            return Err(Error::InvalidArgument("dataset has no records".into()));
        }
        let cache = Cache::open(&config.cache)?;
        let workers = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
        Ok(Pipeline {
            config,
            records,
            cache,
            web: None,
            lm: None,
            workers,
        })
    }

    /// Use these instead of the configured search engine and fetcher.
    pub fn with_web(mut self, engine: Arc<dyn SearchEngine>, fetcher: Arc<dyn PageFetcher>) -> Self {
        self.web = Some((engine, fetcher));
        self
    }

    /// Use this model instead of the configured backend.
    pub fn with_lm(mut self, lm: Arc<dyn LanguageModel>) -> Self {
        self.lm = Some(lm);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn records(&self) -> &[QuestionRecord] {
        &self.records
    }

    fn root(&self) -> &Path {
        self.cache.root()
    }

    pub fn paragraphs_dir(&self) -> PathBuf {
        let c = &self.config;
        let fp = fingerprint(&(c.search.kind, c.top_urls, c.chunk_sentences, c.top_paragraphs));
        self.root().join("paragraphs").join(fp)
    }

    pub fn pools_dir(&self, mode: Mode) -> PathBuf {
        let c = &self.config;
        let evidence = match mode {
            Mode::OpenBookSearch => self
                .paragraphs_dir()
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            Mode::OpenBookGold | Mode::ClosedBook => String::new(),
        };
        let samples = match mode {
            Mode::OpenBookSearch => c.samples_per_paragraph,
            Mode::OpenBookGold | Mode::ClosedBook => c.closed_book_samples,
        };
        let banks = c.banks.as_ref().map(|p| p.to_string_lossy().into_owned());
        let backend = (
            c.backend.kind,
            &c.backend.url,
            &c.backend.name,
            c.backend.context_tokens,
        );
        let fp = fingerprint(&(
            evidence,
            &c.dataset_id,
            banks,
            c.shots,
            c.nucleus_p,
            c.temperature,
            c.max_new_tokens,
            samples,
            c.seed,
            backend,
        ));
        self.root().join("pools").join(mode.as_str()).join(fp)
    }

    pub fn results_dir(&self, mode: Mode) -> PathBuf {
        self.root().join("results").join(mode.as_str())
    }

    fn record_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{}.json", file_stem_for_id(id)))
    }

    fn retriever(&self) -> Result<WebRetriever> {
        let (engine, fetcher): (Arc<dyn SearchEngine>, Arc<dyn PageFetcher>) = match &self.web {
            Some((e, f)) => (e.clone(), f.clone()),
            None => match self.config.search.kind {
                SearchKind::Fixture => {
                    let dir = self.config.search.fixture_dir.as_ref().expect("validated");
                    let web = Arc::new(FixtureWeb::load(dir)?);
                    (web.clone(), web)
                }
                SearchKind::Google => {
                    let engine = match GoogleCustomSearch::from_env() {
                        Ok(e) => e,
                        Err(e) if self.config.offline => {
                            return Err(Error::OfflineMiss {
                                namespace: "search".into(),
                                detail: format!("paragraphs missing and no search credentials: {e}"),
                            })
                        }
                        Err(e) => return Err(e),
                    };
                    let timeout = Duration::from_secs(self.config.search.timeout_secs);
                    (Arc::new(engine), Arc::new(HttpFetcher::new(timeout)?))
                }
            },
        };
        Ok(WebRetriever::new(engine, fetcher, self.cache.clone())
            .offline(self.config.offline)
            .max_in_flight(self.config.workers))
    }

    fn backend(&self) -> Result<Arc<dyn LanguageModel>> {
        let inner: Arc<dyn LanguageModel> = match &self.lm {
            Some(lm) => lm.clone(),
            None => {
                let b = &self.config.backend;
                match b.kind {
                    BackendKind::Mock => Arc::new(MockBackend::new(BackendDescriptor::new(
                        &b.name,
                        b.param_count,
                        b.context_tokens,
                    )?)),
                    BackendKind::Http if self.config.offline => {
                        return Err(Error::OfflineMiss {
                            namespace: "lm".into(),
                            detail: "candidate pools missing and the http backend is unreachable offline"
                                .into(),
                        })
                    }
                    BackendKind::Http => {
                        let url = b.url.as_deref().expect("validated");
                        let http = HttpBackend::connect(url, Duration::from_secs(b.timeout_secs))?;
                        let d = http.descriptor().clone();
                        Arc::new(http.with_descriptor(BackendDescriptor::new(
                            d.name,
                            b.param_count,
                            d.context_tokens,
                        )?))
                    }
                }
            }
        };
        if inner.is_local() {
            return Ok(inner);
        }
        Ok(Arc::new(
            CachedBackend::new(inner, self.cache.clone()).offline(self.config.offline),
        ))
    }

    fn prompt_set(&self) -> Result<PromptSet> {
        let library = match &self.config.banks {
            Some(dir) => BankLibrary::with_dir(dir),
            None => BankLibrary::builtin(),
        };
        let set = PromptSet::load(&library, &self.config.dataset_id)?;
        let k = self.config.shots;
        Ok(PromptSet {
            qa: set.qa.first(k)?,
            q_given_ap: set.q_given_ap.first(k)?,
            q_given_p: set.q_given_p.first(k)?,
            a_given_p: set.a_given_p.first(k)?,
        })
    }

    /// Search, fetch, chunk and rank for every question without a
    /// paragraph file.
    pub fn retrieve(&self) -> Result<StageReport> {
        let dir = self.paragraphs_dir();
        let mut report = StageReport::new("retrieve", self.records.len());
        let pending: Vec<&QuestionRecord> = self
            .records
            .iter()
            .filter(|r| !Self::record_path(&dir, &r.id).is_file())
            .collect();
        report.reused = self.records.len() - pending.len();
        if pending.is_empty() {
            return Ok(report);
        }
        let retriever = self.retriever()?;
        let outcomes: Vec<(String, Result<ParagraphFile>)> = self.workers.install(|| {
            pending
                .par_iter()
                .map(|r| (r.id.clone(), self.retrieve_one(&retriever, r)))
                .collect()
        });
        for (id, outcome) in outcomes {
            match outcome {
                Ok(file) => {
                    write_json_if_changed(&Self::record_path(&dir, &id), &file)?;
                    report.computed += 1;
                }
                Err(e @ Error::OfflineMiss { .. }) => return Err(e),
                Err(e) => {
                    tracing::warn!(question = %id, error = %e, "retrieval failed");
                    report.failed.push((id, e.to_string()));
                }
            }
        }
        report.check_threshold()?;
        Ok(report)
    }

    fn retrieve_one(&self, retriever: &WebRetriever, record: &QuestionRecord) -> Result<ParagraphFile> {
        let docs = retriever.retrieve_documents(&record.question, self.config.top_urls)?;
        let mut paragraphs = Vec::new();
        for d in &docs.documents {
            paragraphs.extend(chunk(&d.document, d.search_rank, self.config.chunk_sentences)?);
        }
        if paragraphs.is_empty() {
            return Err(Error::InvalidArgument("no text in any retrieved page".into()));
        }
        let ranked = rank_paragraphs(&record.question, &paragraphs, self.config.top_paragraphs)?;
        Ok(ParagraphFile {
            question_id: record.id.clone(),
            uniform_fallback: ranked.uniform_fallback,
            paragraphs: ranked.paragraphs,
            fetch_failures: docs.failures,
        })
    }

    /// Gold passages in their given order with uniform priors; cosines are
    /// kept for inspection only. Sampling draws `closed_book_samples` answers
    /// in total, as for the closed-book baseline.
    fn gold_paragraphs(record: &QuestionRecord) -> Result<Vec<RankedParagraph>> {
        let paragraphs: Vec<EvidenceParagraph> = record
            .gold_evidence
            .iter()
            .enumerate()
            .map(|(i, text)| EvidenceParagraph::verbatim("gold", i + 1, text))
            .collect();
        let ranked = rank_paragraphs(&record.question, &paragraphs, paragraphs.len())?;
        let prior = 1.0 / paragraphs.len() as f64;
        Ok(paragraphs
            .into_iter()
            .map(|p| {
                let cosine = ranked
                    .paragraphs
                    .iter()
                    .find(|r| r.paragraph.source_rank == p.source_rank)
                    .map_or(0.0, |r| r.cosine);
                RankedParagraph {
                    paragraph: p,
                    cosine,
                    prior,
                }
            })
            .collect())
    }

    pub fn answer(&self) -> Result<StageReport> {
        self.answer_in(self.config.mode)
    }

    /// Build candidate pools for every question without one.
    pub fn answer_in(&self, mode: Mode) -> Result<StageReport> {
        let dir = self.pools_dir(mode);
        let mut report = StageReport::new(&format!("answer {}", mode.as_str()), self.records.len());
        if mode == Mode::OpenBookGold {
            let missing: Vec<&str> = self
                .records
                .iter()
                .filter(|r| r.gold_evidence.iter().all(|g| g.trim().is_empty()))
                .map(|r| r.id.as_str())
                .collect();
            if !missing.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "open_book_gold needs gold evidence; none for: {}",
                    missing.join(", ")
                )));
            }
        }
        let pending: Vec<&QuestionRecord> = self
            .records
            .iter()
            .filter(|r| !Self::record_path(&dir, &r.id).is_file())
            .collect();
        report.reused = self.records.len() - pending.len();
        if pending.is_empty() {
            return Ok(report);
        }
        let evidence: Vec<Option<Vec<RankedParagraph>>> = match mode {
            Mode::ClosedBook => vec![None; pending.len()],
            Mode::OpenBookGold => pending
                .iter()
                .map(|r| Self::gold_paragraphs(r).map(Some))
                .collect::<Result<_>>()?,
            Mode::OpenBookSearch => {
                let pdir = self.paragraphs_dir();
                let mut files = Vec::with_capacity(pending.len());
                let mut missing = Vec::new();
                for r in &pending {
                    match read_json::<ParagraphFile>(&Self::record_path(&pdir, &r.id))? {
                        Some(f) => files.push(Some(f.paragraphs)),
                        None => missing.push(r.id.clone()),
                    }
                }
                if !missing.is_empty() {
                    return Err(Error::MissingData(missing));
                }
                files
            }
        };
        let lm = self.backend()?;
        let classification = pending.iter().any(|r| matches!(r.target, Target::Label { .. }));
        if mode != Mode::ClosedBook || classification {
            require_scoring(lm.as_ref())?;
        }
        let prompts = self.prompt_set()?;
        let settings = CollectSettings {
            params: self.config.generation_params(),
            closed_book_samples: self.config.closed_book_samples,
            seed: self.config.seed,
        };
        write_json_if_changed(&dir.join("backend.json"), lm.descriptor())?;
        let outcomes: Vec<(String, Result<CandidatePool>)> = self.workers.install(|| {
            pending
                .par_iter()
                .zip(evidence.par_iter())
                .map(|(r, ev)| {
                    let pool = match ev {
                        Some(ranked) if mode == Mode::OpenBookGold => {
                            // the sample budget matches closed-book, spread over the passages
                            let per = self.config.closed_book_samples.div_ceil(ranked.len());
                            let gold = CollectSettings {
                                params: settings.params.clone().with_samples(per),
                                ..settings.clone()
                            };
                            collect_open_book(lm.as_ref(), &prompts, r, ranked, &gold)
                        }
                        Some(ranked) => collect_open_book(lm.as_ref(), &prompts, r, ranked, &settings),
                        None => collect_closed_book(lm.as_ref(), &prompts.qa, r, &settings),
                    };
                    let written = pool.and_then(|p| {
                        write_json_if_changed(&Self::record_path(&dir, &r.id), &p)?;
                        Ok(p)
                    });
                    (r.id.clone(), written)
                })
                .collect()
        });
        for (id, outcome) in outcomes {
            match outcome {
                Ok(_) => report.computed += 1,
                Err(e @ (Error::OfflineMiss { .. } | Error::Capability(_))) => return Err(e),
                Err(e) => {
                    tracing::warn!(question = %id, error = %e, "answering failed");
                    report.failed.push((id, e.to_string()));
                }
            }
        }
        report.check_threshold()?;
        Ok(report)
    }

    /// Every record's pool for `mode`, in dataset order.
    pub fn load_pools(&self, mode: Mode) -> Result<Vec<CandidatePool>> {
        let dir = self.pools_dir(mode);
        let mut pools = Vec::with_capacity(self.records.len());
        let mut missing = Vec::new();
        for r in &self.records {
            match read_json::<CandidatePool>(&Self::record_path(&dir, &r.id))? {
                Some(p) => pools.push(p),
                None => missing.push(r.id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingData(missing));
        }
        Ok(pools)
    }

    fn descriptor(&self, mode: Mode) -> Result<BackendDescriptor> {
        let path = self.pools_dir(mode).join("backend.json");
        read_json(&path)?
            .ok_or_else(|| Error::MissingData(vec![format!("{} (backend description)", path.display())]))
    }

    /// Explicit weights, else tuned weights on disk, else all ones.
    pub fn resolve_weights(&self) -> Result<Weights> {
        if let Some(w) = self.config.weights {
            return Ok(w);
        }
        let tuned: Option<TunedWeights> =
            read_json(&self.results_dir(self.config.mode).join("weights.json"))?;
        Ok(tuned.map_or_else(Weights::default, |t| t.weights))
    }

    fn rerank_config(&self, mode: Mode, scorer: Factorization) -> Result<RerankConfig> {
        Ok(match (mode, scorer) {
            (Mode::ClosedBook, _) => RerankConfig::new(Factorization::AnswerProb),
            (_, Factorization::Poe) => RerankConfig::poe(self.resolve_weights()?),
            (_, f) => RerankConfig::new(f),
        })
    }

    fn predict(
        pool: &CandidatePool,
        config: &RerankConfig,
        mode: Mode,
    ) -> Result<(Prediction, Option<Selection>)> {
        match select_answer(pool, config) {
            Ok(sel) => Ok((
                Prediction {
                    id: pool.question_id.clone(),
                    answer: sel.answer.clone(),
                    source_paragraph: (mode != Mode::ClosedBook)
                        .then(|| pool.paragraphs[sel.paragraph_index].clone()),
                },
                Some(sel),
            )),
            Err(Error::EmptyPool) => Ok((
                Prediction {
                    id: pool.question_id.clone(),
                    answer: String::new(),
                    source_paragraph: None,
                },
                None,
            )),
            Err(e) => Err(e),
        }
    }

    pub fn rerank(&self) -> Result<Vec<Prediction>> {
        self.rerank_in(self.config.mode)
    }

    /// Select one answer per question from cached pools. Makes no model calls.
    pub fn rerank_in(&self, mode: Mode) -> Result<Vec<Prediction>> {
        let pools = self.load_pools(mode)?;
        let config = self.rerank_config(mode, self.config.scorer)?;
        let out = self.results_dir(mode);
        let mut predictions = Vec::with_capacity(pools.len());
        let mut lines = String::new();
        for pool in &pools {
            let (pred, selection) = Self::predict(pool, &config, mode)?;
            write_json_if_changed(
                &out.join("rerank")
                    .join(format!("{}.json", file_stem_for_id(&pred.id))),
                &selection,
            )?;
            lines.push_str(&serde_json::to_string(&pred).map_err(|e| Error::json("encoding prediction", e))?);
            lines.push('\n');
            predictions.push(pred);
        }
        write_if_changed(&out.join("predictions.jsonl"), lines.as_bytes())?;
        Ok(predictions)
    }

    pub fn read_predictions(&self, mode: Mode) -> Result<Vec<Prediction>> {
        read_predictions(&self.results_dir(mode).join("predictions.jsonl"))
    }

    pub fn eval(&self) -> Result<EvalReport> {
        self.eval_in(self.config.mode)
    }

    /// Score the predictions file; retrieval columns come from the pools.
    pub fn eval_in(&self, mode: Mode) -> Result<EvalReport> {
        let predictions = self.read_predictions(mode)?;
        self.eval_predictions(mode, &predictions)
    }

    /// Score `predictions`, which may cover a subset of the dataset.
    pub fn eval_predictions(&self, mode: Mode, predictions: &[Prediction]) -> Result<EvalReport> {
        let mut paragraphs = BTreeMap::new();
        if mode != Mode::ClosedBook {
            for pool in self.load_pools(mode)? {
                paragraphs.insert(pool.question_id, pool.paragraphs);
            }
        }
        let report = evaluate(
            &self.config.dataset_id,
            &self.records,
            predictions,
            &paragraphs,
            self.config.top_paragraphs,
        )?;
        let out = self.results_dir(mode);
        write_json_if_changed(&out.join("report.json"), &report)?;
        write_if_changed(&out.join("summary.txt"), report.summary().as_bytes())?;
        Ok(report)
    }

    /// Grid-search PoE weights on the seeded held-out split.
    pub fn tune(&self) -> Result<TunedWeights> {
        let mode = self.config.mode;
        if mode == Mode::ClosedBook {
            return Err(Error::InvalidArgument(
                "weight tuning needs open-book pools".into(),
            ));
        }
        let pools = self.load_pools(mode)?;
        let indices: Vec<usize> = (0..pools.len()).collect();
        let (_, heldout) = split_heldout(&indices, self.config.heldout_fraction, self.config.seed)?;
        let held_pools: Vec<CandidatePool> = heldout.iter().map(|&i| pools[i].clone()).collect();
        let result = tune_weights(&held_pools, |i, sel| {
            task_metric(&self.records[heldout[i]], &sel.answer)
        })?;
        let tuned = TunedWeights {
            weights: result.weights,
            metric: result.metric,
            heldout_ids: heldout.iter().map(|&i| self.records[i].id.clone()).collect(),
        };
        let out = self.results_dir(mode);
        write_json_if_changed(&out.join("weights.json"), &tuned)?;
        write_if_changed(&out.join("trace.tsv"), trace_tsv(&result.trace).as_bytes())?;
        Ok(tuned)
    }

    fn cost_rows(
        &self,
        mode: Mode,
        pools: &[CandidatePool],
        counts: &[usize],
        scorers: &[Factorization],
    ) -> Result<Vec<CostRow>> {
        let descriptor = self.descriptor(mode)?;
        let mut rows = Vec::new();
        for &scorer in scorers {
            let config = self.rerank_config(mode, scorer)?;
            for &n in counts {
                let mut metric = 0.0;
                let mut calls = Vec::new();
                for (record, pool) in self.records.iter().zip(pools) {
                    let pool = if mode == Mode::ClosedBook {
                        pool.clone()
                    } else {
                        pool.truncated(n)
                    };
                    let (pred, _) = Self::predict(&pool, &config, mode)?;
                    metric += task_metric(record, &pred.answer)?;
                    calls.extend(
                        pool.calls
                            .iter()
                            .filter(|c| c.purpose.used_by(scorer))
                            .map(|c| (c.prompt_tokens, c.generated_tokens)),
                    );
                }
                let cost = estimate_cost(&calls, &descriptor);
                rows.push(CostRow {
                    mode,
                    scorer,
                    paragraphs: n,
                    metric: metric / self.records.len() as f64,
                    prompt_tokens: cost.prompt_tokens,
                    generated_tokens: cost.generated_tokens,
                    flops: cost.flops,
                });
            }
        }
        Ok(rows)
    }

    /// Metric and FLOPs per (scorer, paragraph count), plus a zero-paragraph
    /// closed-book row when closed-book pools exist. Sweep values above the
    /// deepest pool are clipped to it.
    pub fn cost(&self) -> Result<Vec<CostRow>> {
        let mut rows = Vec::new();
        let closed = self.load_pools(Mode::ClosedBook);
        match (&closed, self.config.mode) {
            (Ok(pools), _) => {
                rows.extend(self.cost_rows(Mode::ClosedBook, pools, &[0], &[Factorization::AnswerProb])?)
            }
            (Err(_), Mode::ClosedBook) => return closed.map(|_| Vec::new()),
            (Err(_), _) => {}
        }
        let mode = self.config.mode;
        if mode != Mode::ClosedBook {
            let pools = self.load_pools(mode)?;
            let deepest = pools.iter().map(|p| p.paragraphs.len()).max().unwrap_or(0);
            let mut counts: Vec<usize> = self.config.cost_sweep.iter().map(|&n| n.min(deepest)).collect();
            counts.sort_unstable();
            counts.dedup();
            rows.extend(self.cost_rows(mode, &pools, &counts, &Factorization::ALL)?);
        }
        let mut tsv = format!("{COST_HEADER}\n");
        for r in &rows {
            let _ = writeln!(tsv, "{}", r.tsv());
        }
        write_if_changed(&self.results_dir(mode).join("cost.tsv"), tsv.as_bytes())?;
        Ok(rows)
    }

    /// All stages, then the closed-book baseline and the cost table.
    /// PoE weights are tuned first unless fixed in the config.
    pub fn run(&self) -> Result<RunOutcome> {
        let mode = self.config.mode;
        let mut stages = Vec::new();
        if mode == Mode::OpenBookSearch {
            stages.push(self.retrieve()?);
        }
        stages.push(self.answer()?);
        if mode != Mode::ClosedBook
            && self.config.scorer == Factorization::Poe
            && self.config.weights.is_none()
        {
            let heldout = (self.config.heldout_fraction * self.records.len() as f64).round() as usize;
            if heldout > 0 {
                self.tune()?;
            } else {
                tracing::warn!("held-out split is empty; using default weights");
            }
        }
        self.rerank()?;
        let mut reports = vec![self.eval()?];
        if mode != Mode::ClosedBook {
            stages.push(self.answer_in(Mode::ClosedBook)?);
            self.rerank_in(Mode::ClosedBook)?;
            reports.push(self.eval_in(Mode::ClosedBook)?);
        }
        let cost = self.cost()?;
        Ok(RunOutcome {
            stages,
            reports,
            cost,
        })
    }
}

pub fn trace_tsv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step\tphase\tw_a_qp\tw_q_ap\tw_a_p\tw_q_p\tw_prior\tmetric\taccepted\n");
    for t in trace {
        let w = t.weights.0;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            t.step, t.phase, w[0], w[1], w[2], w[3], w[4], t.metric, t.accepted
        );
    }
    out
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(format!("decoding {}", path.display()), e)))
        .collect()
}
