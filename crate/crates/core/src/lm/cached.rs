use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{BackendDescriptor, GenerationParams, LanguageModel, Sample};
use crate::cache::{Cache, CacheKey, Namespace};
use crate::error::{Error, Result};

const TOKEN_MEMO_LIMIT: usize = 50_000;

/// Content-addressed cache in front of any backend. Prompts enter the key
/// as their SHA-256 so cache files stay small.
pub struct CachedBackend {
    inner: Arc<dyn LanguageModel>,
    cache: Cache,
    offline: bool,
    tokens: Mutex<HashMap<String, usize>>,
}

#[derive(Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Request<'a> {
    Sample {
        model: &'a str,
        prompt_sha256: String,
        params: &'a GenerationParams,
        seed: u64,
    },
    Score {
        model: &'a str,
        prompt_sha256: String,
        continuation: &'a str,
    },
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl CachedBackend {
    pub fn new(inner: Arc<dyn LanguageModel>, cache: Cache) -> Self {
        CachedBackend {
            inner,
            cache,
            offline: false,
            tokens: Mutex::new(HashMap::new()),
        }
    }

    /// Remote backends answer cache misses with [`Error::OfflineMiss`];
    /// in-process backends keep computing.
    pub fn offline(mut self, offline: bool) -> Self {
        self.offline = offline;
        self
    }

    fn through<T: Serialize + serde::de::DeserializeOwned>(
        &self,
        request: &Request<'_>,
        compute: impl FnOnce() -> Result<T>,
    ) -> Result<T> {
        let key = CacheKey::for_request(Namespace::Lm, request)?;
        if let Some(hit) = self.cache.get(&key)? {
            return Ok(hit);
        }
        if self.offline && !self.inner.is_local() {
            return Err(Error::OfflineMiss {
                namespace: Namespace::Lm.to_string(),
                detail: format!("{} request {}", self.inner.descriptor().name, key.digest),
            });
        }
        let value = compute()?;
        self.cache.put(&key, request, &value)?;
        Ok(value)
    }
}

impl LanguageModel for CachedBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn count_tokens(&self, text: &str) -> Result<usize> {
        if let Some(&n) = self.tokens.lock().expect("token memo poisoned").get(text) {
            return Ok(n);
        }
        let n = self.inner.count_tokens(text)?;
        let mut memo = self.tokens.lock().expect("token memo poisoned");
        if memo.len() >= TOKEN_MEMO_LIMIT {
            memo.clear();
        }
        memo.insert(text.to_string(), n);
        Ok(n)
    }

    fn sample(&self, prompt: &str, params: &GenerationParams, seed: u64) -> Result<Vec<Sample>> {
        let request = Request::Sample {
            model: &self.inner.descriptor().name,
            prompt_sha256: digest(prompt),
            params,
            seed,
        };
        self.through(&request, || self.inner.sample(prompt, params, seed))
    }

    fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<f64> {
        let request = Request::Score {
            model: &self.inner.descriptor().name,
            prompt_sha256: digest(prompt),
            continuation,
        };
        self.through(&request, || self.inner.score_continuation(prompt, continuation))
    }

    fn supports_scoring(&self) -> bool {
        self.inner.supports_scoring()
    }

    fn is_local(&self) -> bool {
        self.inner.is_local()
    }
}
