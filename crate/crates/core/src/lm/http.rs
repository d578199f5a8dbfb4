//! JSON-over-HTTP completion backend.
//!
//! Endpoints, relative to the base URL:
//!
//! - `GET  /v1/info` → `{"name", "param_count", "context_tokens", "supports_scoring"}`
//! - `POST /v1/sample` `{"prompt", "n", "nucleus_p", "temperature",
//!   "max_new_tokens", "stop", "seed"}` → `{"samples": [{"text", "token_logprobs"}]}`
//! - `POST /v1/score` `{"prompt", "continuation"}` → `{"token_logprobs"}`
//! - `POST /v1/tokenize` `{"text"}` → `{"count"}`
//!
//! A prompt longer than the model's window is answered with HTTP 413 or an
//! error body `{"error": {"type": "context_overflow"}}`.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, GenerationParams, LanguageModel, Sample};
use crate::error::{Error, Result};
use crate::websearch::RetryPolicy;

pub struct HttpBackend {
    base_url: String,
    client: Client,
    retry: RetryPolicy,
    descriptor: BackendDescriptor,
    supports_scoring: bool,
}

#[derive(Deserialize)]
struct Info {
    name: String,
    param_count: u64,
    context_tokens: usize,
    #[serde(default = "yes")]
    supports_scoring: bool,
}

fn yes() -> bool {
    true
}

#[derive(Serialize)]
struct SampleRequest<'a> {
    prompt: &'a str,
    n: usize,
    nucleus_p: f64,
    temperature: f64,
    max_new_tokens: usize,
    stop: &'a [String],
    seed: u64,
}

#[derive(Deserialize)]
struct SampleResponse {
    samples: Vec<WireSample>,
}

#[derive(Deserialize)]
struct WireSample {
    text: String,
    token_logprobs: Vec<f64>,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    continuation: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    token_logprobs: Vec<f64>,
}

#[derive(Serialize)]
struct TokenizeRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct TokenizeResponse {
    count: usize,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Deserialize)]
struct ErrorDetail {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    message: String,
}

impl HttpBackend {
    /// Connect and read the model description from `/v1/info`.
    pub fn connect(base_url: &str, timeout: Duration) -> Result<Self> {
        let client = crate::websearch::http_client(timeout)?;
        let mut backend = HttpBackend {
            base_url: base_url.trim_end_matches('/').to_string(),
            client,
            retry: RetryPolicy::default(),
            descriptor: BackendDescriptor::new(base_url, 1, 1)?,
            supports_scoring: true,
        };
        let info: Info = backend.retry.run(|| {
            let url = backend.url("info");
            let resp = backend
                .client
                .get(&url)
                .send()
                .map_err(|e| crate::websearch::transport_error(&url, e))?;
            backend.decode(&url, resp)
        })?;
        backend.descriptor = BackendDescriptor::new(info.name, info.param_count, info.context_tokens)?;
        backend.supports_scoring = info.supports_scoring;
        Ok(backend)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Override the advertised size or window, e.g. for cost what-ifs.
    pub fn with_descriptor(mut self, descriptor: BackendDescriptor) -> Self {
        self.descriptor = descriptor;
        self
    }

    fn url(&self, endpoint: &str) -> String {
        format!("{}/v1/{endpoint}", self.base_url)
    }

    fn decode<T: DeserializeOwned>(&self, url: &str, resp: reqwest::blocking::Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            return resp
                .json()
                .map_err(|e| Error::Backend(format!("{url}: malformed response: {e}")));
        }
        let body = resp.text().unwrap_or_default();
        let detail = serde_json::from_str::<ErrorBody>(&body).ok().map(|b| b.error);
        if status == StatusCode::PAYLOAD_TOO_LARGE
            || detail.as_ref().is_some_and(|d| d.kind == "context_overflow")
        {
            return Err(Error::ContextOverflow {
                budget: self.descriptor.context_tokens,
            });
        }
        if detail.as_ref().is_some_and(|d| d.kind == "unsupported") {
            return Err(Error::Capability(format!(
                "{url}: {}",
                detail.map(|d| d.message).unwrap_or_default()
            )));
        }
        let message = format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
        Err(match status {
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN | StatusCode::TOO_MANY_REQUESTS => Error::Auth {
                target: url.to_string(),
                message,
            },
            s if s.is_server_error() || s == StatusCode::REQUEST_TIMEOUT => {
                crate::websearch::transport_error(url, message)
            }
            _ => Error::Backend(format!("{url}: {message}")),
        })
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, endpoint: &str, body: &Req) -> Result<Resp> {
        let url = self.url(endpoint);
        self.retry.run(|| {
            let resp = self
                .client
                .post(&url)
                .json(body)
                .send()
                .map_err(|e| crate::websearch::transport_error(&url, e))?;
            self.decode(&url, resp)
        })
    }
}

impl LanguageModel for HttpBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn count_tokens(&self, text: &str) -> Result<usize> {
        let resp: TokenizeResponse = self.post("tokenize", &TokenizeRequest { text })?;
        Ok(resp.count)
    }

    fn sample(&self, prompt: &str, params: &GenerationParams, seed: u64) -> Result<Vec<Sample>> {
        params.validate()?;
        let request = SampleRequest {
            prompt,
            n: params.n_samples,
            nucleus_p: params.nucleus_p,
            temperature: params.temperature,
            max_new_tokens: params.max_new_tokens,
            stop: &params.stop_sequences,
            seed,
        };
        let resp: SampleResponse = self.post("sample", &request)?;
        if resp.samples.len() != params.n_samples {
            return Err(Error::Backend(format!(
                "asked for {} samples, got {}",
                params.n_samples,
                resp.samples.len()
            )));
        }
        resp.samples
            .into_iter()
            .map(|s| {
                let logprob: f64 = s.token_logprobs.iter().sum();
                if !logprob.is_finite() {
                    return Err(Error::Backend("non-finite sample log-probability".into()));
                }
                let mut text = s.text;
                if let Some(stop) = params
                    .stop_sequences
                    .iter()
                    .find(|st| text.ends_with(st.as_str()))
                {
                    text.truncate(text.len() - stop.len());
                }
                Ok(Sample {
                    text,
                    logprob,
                    token_count: s.token_logprobs.len(),
                })
            })
            .collect()
    }

    fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<f64> {
        if continuation.is_empty() {
            return Err(Error::InvalidArgument("continuation must be non-empty".into()));
        }
        let resp: ScoreResponse = self.post("score", &ScoreRequest { prompt, continuation })?;
        let lp: f64 = resp.token_logprobs.iter().sum();
        if !lp.is_finite() {
            return Err(Error::Backend("non-finite continuation log-probability".into()));
        }
        Ok(lp)
    }

    fn supports_scoring(&self) -> bool {
        self.supports_scoring
    }
}
