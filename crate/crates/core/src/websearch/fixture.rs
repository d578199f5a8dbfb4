//! In-process stand-in for a search engine plus the web it indexes.
//!
//! A fixture directory holds `search.json`, mapping each query string to its
//! ordered hit list, and `pages.json`, mapping each URL either to a page
//! (`{"content_type": "...", "file": "relative/path"}`) or to a transport
//! failure (`{"error": "..."}`). Call counters let tests assert that a warm
//! cache really avoids the "network".

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Deserialize;

use super::{PageFetcher, RawPage, SearchEngine};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum FixturePage {
    Page { content_type: String, body: String },
    Failure(String),
}

#[derive(Debug, Default)]
pub struct FixtureWeb {
    queries: BTreeMap<String, Vec<String>>,
    pages: BTreeMap<String, FixturePage>,
    search_calls: AtomicUsize,
    fetch_calls: AtomicUsize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PageSpec {
    File { content_type: String, file: String },
    Error { error: String },
}

impl FixtureWeb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
        };
        let queries: BTreeMap<String, Vec<String>> = serde_json::from_str(&read("search.json")?)
            .map_err(|e| Error::json("decoding fixture search.json", e))?;
        let specs: BTreeMap<String, PageSpec> = serde_json::from_str(&read("pages.json")?)
            .map_err(|e| Error::json("decoding fixture pages.json", e))?;
        let mut web = FixtureWeb {
            queries,
            ..Self::default()
        };
        for (url, spec) in specs {
            let page = match spec {
                PageSpec::File { content_type, file } => FixturePage::Page {
                    content_type,
                    body: read(&file)?,
                },
                PageSpec::Error { error } => FixturePage::Failure(error),
            };
            web.pages.insert(url, page);
        }
        Ok(web)
    }

    pub fn with_query(mut self, query: &str, urls: &[&str]) -> Self {
        self.queries
            .insert(query.to_string(), urls.iter().map(|u| u.to_string()).collect());
        self
    }

    pub fn with_page(mut self, url: &str, content_type: &str, body: &str) -> Self {
        self.pages.insert(
            url.to_string(),
            FixturePage::Page {
                content_type: content_type.to_string(),
                body: body.to_string(),
            },
        );
        self
    }

    pub fn with_failure(mut self, url: &str, message: &str) -> Self {
        self.pages
            .insert(url.to_string(), FixturePage::Failure(message.to_string()));
        self
    }

    pub fn search_calls(&self) -> usize {
        self.search_calls.load(Ordering::SeqCst)
    }

    pub fn fetch_calls(&self) -> usize {
        self.fetch_calls.load(Ordering::SeqCst)
    }
}

impl SearchEngine for FixtureWeb {
    fn name(&self) -> String {
        "fixture".to_string()
    }

    fn search(&self, query: &str, top_k: usize) -> Result<Vec<String>> {
        self.search_calls.fetch_add(1, Ordering::SeqCst);
        let mut hits = self.queries.get(query).cloned().unwrap_or_default();
        hits.truncate(top_k);
        Ok(hits)
    }
}

impl PageFetcher for FixtureWeb {
    fn fetch(&self, url: &str) -> Result<RawPage> {
        self.fetch_calls.fetch_add(1, Ordering::SeqCst);
        match self.pages.get(url) {
            Some(FixturePage::Page { content_type, body }) => Ok(RawPage {
                content_type: Some(content_type.clone()),
                body: body.clone(),
            }),
            Some(FixturePage::Failure(message)) => Err(Error::Transport {
                target: url.to_string(),
                message: message.clone(),
            }),
            None => Err(Error::Backend(format!("{url}: HTTP 404"))),
        }
    }
}
