use std::thread;
use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::Deserialize;

use super::{PageFetcher, RawPage, SearchEngine};
use crate::error::{Error, Result};

pub const SEARCH_API_KEY_ENV: &str = "OPENBOOK_SEARCH_API_KEY";
pub const SEARCH_ENGINE_ID_ENV: &str = "OPENBOOK_SEARCH_ENGINE_ID";

pub const GOOGLE_CSE_ENDPOINT: &str = "https://www.googleapis.com/customsearch/v1";

/// Bounded retries with exponential backoff for transient failures.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_transient() && attempt < self.attempts => {
                    tracing::debug!(attempt, error = %e, "retrying");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

pub(crate) fn default_client(timeout: Duration) -> Result<Client> {
    Client::builder()
        .timeout(timeout)
        .user_agent(concat!("openbook/", env!("CARGO_PKG_VERSION")))
        .build()
        .map_err(|e| Error::Backend(format!("building HTTP client: {e}")))
}

pub(crate) fn transport(target: &str, e: impl std::fmt::Display) -> Error {
    Error::Transport {
        target: target.to_string(),
        message: e.to_string(),
    }
}

/// Map an HTTP status to the error taxonomy: 401/403/429 are credential or
/// quota problems, 5xx and 408 are worth retrying, other 4xx are permanent.
pub(crate) fn check_status(target: &str, response: Response) -> Result<Response> {
    let status = response.status();
    if status.is_success() {
        return Ok(response);
    }
    let body = response.text().unwrap_or_default();
    let message = format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
    Err(match status {
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN | StatusCode::TOO_MANY_REQUESTS => Error::Auth {
            target: target.to_string(),
            message,
        },
        s if s.is_server_error() || s == StatusCode::REQUEST_TIMEOUT => transport(target, message),
        _ => Error::Backend(format!("{target}: {message}")),
    })
}

/// Google Custom Search JSON API adapter. The API returns at most ten
/// results per page, so deeper requests are paginated.
pub struct GoogleCustomSearch {
    api_key: String,
    engine_id: String,
    endpoint: String,
    client: Client,
    retry: RetryPolicy,
}

#[derive(Deserialize)]
struct CsePage {
    #[serde(default)]
    items: Vec<CseItem>,
}

#[derive(Deserialize)]
struct CseItem {
    link: String,
}

impl GoogleCustomSearch {
    pub fn new(api_key: impl Into<String>, engine_id: impl Into<String>) -> Result<Self> {
        Ok(GoogleCustomSearch {
            api_key: api_key.into(),
            engine_id: engine_id.into(),
            endpoint: GOOGLE_CSE_ENDPOINT.to_string(),
            client: default_client(Duration::from_secs(30))?,
            retry: RetryPolicy::default(),
        })
    }

    /// Credentials from `OPENBOOK_SEARCH_API_KEY` / `OPENBOOK_SEARCH_ENGINE_ID`.
    pub fn from_env() -> Result<Self> {
        let var = |name: &str| {
            std::env::var(name).map_err(|_| Error::Auth {
                target: "google-cse".into(),
                message: format!("environment variable {name} is not set"),
            })
        };
        Self::new(var(SEARCH_API_KEY_ENV)?, var(SEARCH_ENGINE_ID_ENV)?)
    }

    pub fn with_endpoint(mut self, endpoint: impl Into<String>) -> Self {
        self.endpoint = endpoint.into();
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn page(&self, query: &str, start: usize, num: usize) -> Result<Vec<String>> {
        let target = "google-cse";
        let start = start.to_string();
        let num = num.to_string();
        let response = self
            .client
            .get(&self.endpoint)
            .query(&[
                ("key", self.api_key.as_str()),
                ("cx", self.engine_id.as_str()),
                ("q", query),
                ("start", start.as_str()),
                ("num", num.as_str()),
            ])
            .send()
            .map_err(|e| transport(target, e))?;
        let page: CsePage = check_status(target, response)?
            .json()
            .map_err(|e| Error::Backend(format!("{target}: malformed response: {e}")))?;
        Ok(page.items.into_iter().map(|i| i.link).collect())
    }
}

impl SearchEngine for GoogleCustomSearch {
    fn name(&self) -> String {
        format!("google-cse:{}", self.engine_id)
    }

    fn search(&self, query: &str, top_k: usize) -> Result<Vec<String>> {
        let mut urls = Vec::new();
        while urls.len() < top_k {
            let num = (top_k - urls.len()).min(10);
            let page = self.retry.run(|| self.page(query, urls.len() + 1, num))?;
            let exhausted = page.len() < num;
            urls.extend(page);
            if exhausted {
                break;
            }
        }
        urls.truncate(top_k);
        Ok(urls)
    }
}

pub struct HttpFetcher {
    client: Client,
    retry: RetryPolicy,
}

impl HttpFetcher {
    pub fn new(timeout: Duration) -> Result<Self> {
        Ok(HttpFetcher {
            client: default_client(timeout)?,
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl PageFetcher for HttpFetcher {
    fn fetch(&self, url: &str) -> Result<RawPage> {
        self.retry.run(|| {
            let response = self.client.get(url).send().map_err(|e| transport(url, e))?;
            let response = check_status(url, response)?;
            let content_type = response
                .headers()
                .get(reqwest::header::CONTENT_TYPE)
                .and_then(|v| v.to_str().ok())
                .map(str::to_string);
            let body = response.text().map_err(|e| transport(url, e))?;
            Ok(RawPage { content_type, body })
        })
    }
}
