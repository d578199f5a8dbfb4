//! Web retrieval: issue the question verbatim as a search query, fetch the
//! hits, reduce each page to clean text, and cache every step so later runs
//! can replay offline.

mod extract;
mod fixture;
mod http;

pub use extract::{extract_main_text, normalize_plain_text};
pub use fixture::FixtureWeb;
pub(crate) use http::{default_client as http_client, transport as transport_error};
pub use http::{
    GoogleCustomSearch, HttpFetcher, RetryPolicy, GOOGLE_CSE_ENDPOINT, SEARCH_API_KEY_ENV,
    SEARCH_ENGINE_ID_ENV,
};

use std::sync::Arc;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{Cache, CacheKey, Namespace};
use crate::error::{Error, Result};

/// Number of search hits requested per question.
pub const DEFAULT_TOP_URLS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    /// 1-based position in the engine's ranking.
    pub rank: usize,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebDocument {
    pub url: String,
    pub clean_text: String,
    pub fetched_at: DateTime<Utc>,
    pub word_count: usize,
}

impl WebDocument {
    pub fn new(url: impl Into<String>, clean_text: String, fetched_at: DateTime<Utc>) -> Self {
        let word_count = clean_text.split_whitespace().count();
        WebDocument {
            url: url.into(),
            clean_text,
            fetched_at,
            word_count,
        }
    }
}

/// Result of fetching one URL. Pages that yield no usable text (non-HTML
/// content, empty bodies) are recorded as skipped rather than failing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum FetchOutcome {
    Document(WebDocument),
    Skipped { url: String, reason: String },
}

impl FetchOutcome {
    pub fn document(&self) -> Option<&WebDocument> {
        match self {
            FetchOutcome::Document(d) => Some(d),
            FetchOutcome::Skipped { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPage {
    pub content_type: Option<String>,
    pub body: String,
}

/// A web search API: query in, ordered URLs out.
pub trait SearchEngine: Send + Sync {
    /// Stable identity, part of every cache key.
    fn name(&self) -> String;
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<String>>;
}

pub trait PageFetcher: Send + Sync {
    fn fetch(&self, url: &str) -> Result<RawPage>;
}

#[derive(Serialize)]
struct SearchRequest<'a> {
    engine: &'a str,
    query: &'a str,
    top_k: usize,
}

#[derive(Serialize)]
struct FetchRequest<'a> {
    url: &'a str,
}

enum ContentKind {
    Html,
    Plain,
    Other(String),
}

fn classify(content_type: Option<&str>) -> ContentKind {
    let Some(ct) = content_type else {
        return ContentKind::Html;
    };
    let mime = ct.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
    match mime.as_str() {
        "text/html" | "application/xhtml+xml" | "" => ContentKind::Html,
        "text/plain" => ContentKind::Plain,
        _ => ContentKind::Other(mime),
    }
}

/// Turn a fetched page into a document or a skip marker.
pub fn page_to_outcome(url: &str, page: &RawPage, fetched_at: DateTime<Utc>) -> FetchOutcome {
    let text = match classify(page.content_type.as_deref()) {
        ContentKind::Html => extract_main_text(&page.body),
        ContentKind::Plain => normalize_plain_text(&page.body),
        ContentKind::Other(mime) => {
            return FetchOutcome::Skipped {
                url: url.to_string(),
                reason: format!("unsupported content type {mime}"),
            }
        }
    };
    if text.is_empty() {
        return FetchOutcome::Skipped {
            url: url.to_string(),
            reason: "no extractable text".into(),
        };
    }
    FetchOutcome::Document(WebDocument::new(url, text, fetched_at))
}

pub struct WebRetriever {
    engine: Arc<dyn SearchEngine>,
    fetcher: Arc<dyn PageFetcher>,
    cache: Cache,
    offline: bool,
    pool: Arc<rayon::ThreadPool>,
}

impl WebRetriever {
    pub fn new(engine: Arc<dyn SearchEngine>, fetcher: Arc<dyn PageFetcher>, cache: Cache) -> Self {
        WebRetriever {
            engine,
            fetcher,
            cache,
            offline: false,
            pool: Arc::new(build_pool(8)),
        }
    }

    /// Forbid network access; cache misses become [`Error::OfflineMiss`].
    pub fn offline(mut self, offline: bool) -> Self {
        self.offline = offline;
        self
    }

    /// Upper bound on concurrent page fetches.
    pub fn max_in_flight(mut self, n: usize) -> Self {
        self.pool = Arc::new(build_pool(n));
        self
    }

    fn cached<Req: Serialize, Resp: Serialize + serde::de::DeserializeOwned>(
        &self,
        namespace: Namespace,
        request: &Req,
        describe: impl FnOnce() -> String,
        compute: impl FnOnce() -> Result<Resp>,
    ) -> Result<Resp> {
        let key = CacheKey::for_request(namespace, request)?;
        if let Some(hit) = self.cache.get(&key)? {
            return Ok(hit);
        }
        if self.offline {
            return Err(Error::OfflineMiss {
                namespace: namespace.to_string(),
                detail: describe(),
            });
        }
        let response = compute()?;
        self.cache.put(&key, request, &response)?;
        Ok(response)
    }

    pub fn search(&self, query: &str, top_k: usize) -> Result<Vec<SearchResult>> {
        if query.trim().is_empty() {
            return Err(Error::InvalidArgument("empty search query".into()));
        }
        if top_k == 0 {
            return Err(Error::InvalidArgument("top_k must be at least 1".into()));
        }
        let engine = self.engine.name();
        let request = SearchRequest {
            engine: &engine,
            query,
            top_k,
        };
        self.cached(
            Namespace::Search,
            &request,
            || format!("search {query:?}"),
            || {
                let mut urls = self.engine.search(query, top_k)?;
                urls.truncate(top_k);
                Ok(urls
                    .into_iter()
                    .enumerate()
                    .map(|(i, url)| SearchResult { rank: i + 1, url })
                    .collect())
            },
        )
    }

    pub fn fetch_and_extract(&self, url: &str) -> Result<FetchOutcome> {
        let parsed = reqwest::Url::parse(url)
            .map_err(|e| Error::InvalidArgument(format!("malformed url {url:?}: {e}")))?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(Error::InvalidArgument(format!(
                "unsupported url scheme in {url:?}"
            )));
        }
        self.cached(
            Namespace::Fetch,
            &FetchRequest { url },
            || format!("fetch {url}"),
            || {
                let page = self.fetcher.fetch(url)?;
                Ok(page_to_outcome(url, &page, Utc::now()))
            },
        )
    }

    /// Search, then fetch every hit, keeping search order and dropping
    /// skipped pages. Individual fetch failures are logged; the call fails
    /// only when every hit failed.
    pub fn retrieve_documents(&self, question: &str, top_k: usize) -> Result<RetrievedDocuments> {
        let results = self.search(question, top_k)?;
        let outcomes: Vec<Result<FetchOutcome>> = self.pool.install(|| {
            results
                .par_iter()
                .map(|r| self.fetch_and_extract(&r.url))
                .collect()
        });
        let mut documents = Vec::new();
        let mut failures = Vec::new();
        for (result, outcome) in results.iter().zip(outcomes) {
            match outcome {
                Ok(FetchOutcome::Document(doc)) => documents.push(RankedDocument {
                    search_rank: result.rank,
                    document: doc,
                }),
                Ok(FetchOutcome::Skipped { reason, .. }) => {
                    tracing::debug!(url = %result.url, %reason, "skipped page");
                }
                Err(e @ Error::OfflineMiss { .. }) => return Err(e),
                Err(e) => {
                    tracing::warn!(url = %result.url, error = %e, "fetch failed");
                    failures.push((result.url.clone(), e.to_string()));
                }
            }
        }
        if !results.is_empty() && failures.len() == results.len() {
            return Err(Error::AllFetchesFailed {
                question: question.to_string(),
                causes: failures,
            });
        }
        Ok(RetrievedDocuments {
            results,
            documents,
            failures,
        })
    }
}

fn build_pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDocument {
    /// Rank of the search hit this document came from.
    pub search_rank: usize,
    pub document: WebDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDocuments {
    pub results: Vec<SearchResult>,
    pub documents: Vec<RankedDocument>,
    /// `(url, cause)` for hits that could not be fetched.
    pub failures: Vec<(String, String)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn retriever(web: Arc<FixtureWeb>, dir: &std::path::Path) -> WebRetriever {
        WebRetriever::new(web.clone(), web, Cache::open(dir).unwrap())
    }

    fn seven_hits() -> FixtureWeb {
        let urls: Vec<String> = (1..=7).map(|i| format!("http://h/{i}")).collect();
        let refs: Vec<&str> = urls.iter().map(String::as_str).collect();
        FixtureWeb::new().with_query("q", &refs)
    }

    #[test]
    fn fewer_hits_than_requested() {
        let dir = tempfile::tempdir().unwrap();
        let r = retriever(Arc::new(seven_hits()), dir.path());
        let results = r.search("q", DEFAULT_TOP_URLS).unwrap();
        assert_eq!(results.len(), 7);
        assert_eq!(
            results.iter().map(|r| r.rank).collect::<Vec<_>>(),
            (1..=7).collect::<Vec<_>>()
        );
    }

    #[test]
    fn offline_replays_cached_search() {
        let dir = tempfile::tempdir().unwrap();
        let web = Arc::new(seven_hits());
        let online = retriever(web.clone(), dir.path()).search("q", 20).unwrap();
        let offline_r = retriever(web.clone(), dir.path()).offline(true);
        assert_eq!(offline_r.search("q", 20).unwrap(), online);
        assert_eq!(web.search_calls(), 1);
        let miss = offline_r.search("other", 20).unwrap_err();
        assert!(matches!(miss, Error::OfflineMiss { .. }));
    }

    #[test]
    fn non_html_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let web = FixtureWeb::new().with_page("http://x/a.pdf", "application/pdf", "%PDF-1.4");
        let r = retriever(Arc::new(web), dir.path());
        let out = r.fetch_and_extract("http://x/a.pdf").unwrap();
        assert!(matches!(out, FetchOutcome::Skipped { .. }));
    }

    #[test]
    fn malformed_url_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = retriever(Arc::new(FixtureWeb::new()), dir.path());
        assert!(matches!(
            r.fetch_and_extract("not a url"),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn word_count_matches_text() {
        let doc = WebDocument::new("u", "a b  c\nd".into(), Utc::now());
        assert_eq!(doc.word_count, 4);
    }

    #[test]
    fn retrieve_preserves_order_and_drops_skips() {
        let dir = tempfile::tempdir().unwrap();
        let web = FixtureWeb::new()
            .with_query("q", &["http://a/", "http://b/", "http://c/"])
            .with_page("http://a/", "text/html", "<p>First.</p>")
            .with_page("http://b/", "application/pdf", "%PDF")
            .with_page("http://c/", "text/html; charset=utf-8", "<p>Third.</p>");
        let r = retriever(Arc::new(web), dir.path());
        let got = r.retrieve_documents("q", 20).unwrap();
        let urls: Vec<_> = got.documents.iter().map(|d| d.document.url.as_str()).collect();
        assert_eq!(urls, ["http://a/", "http://c/"]);
        assert_eq!(got.documents[1].search_rank, 3);
        let one = r.retrieve_documents("q", 1).unwrap();
        assert!(one.documents.len() <= 1);
    }

    #[test]
    fn all_failures_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let web = FixtureWeb::new()
            .with_query("q", &["http://a/", "http://b/"])
            .with_failure("http://a/", "timeout")
            .with_failure("http://b/", "reset");
        let r = retriever(Arc::new(web), dir.path());
        match r.retrieve_documents("q", 20).unwrap_err() {
            Error::AllFetchesFailed { causes, .. } => {
                assert_eq!(causes.len(), 2);
                assert!(causes[0].1.contains("timeout"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn failed_fetches_are_not_cached() {
        let dir = tempfile::tempdir().unwrap();
        let web = Arc::new(
            FixtureWeb::new()
                .with_query("q", &["http://a/", "http://b/"])
                .with_page("http://a/", "text/html", "<p>ok</p>")
                .with_failure("http://b/", "timeout"),
        );
        let r = retriever(web.clone(), dir.path());
        let first = r.retrieve_documents("q", 20).unwrap();
        assert_eq!(first.failures.len(), 1);
        r.retrieve_documents("q", 20).unwrap();
        // one miss for a, two attempts for b (failure retried on the second run)
        assert_eq!(web.fetch_calls(), 3);
    }
}
