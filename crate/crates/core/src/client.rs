//! HTTP implementations of the backend contracts.
//!
//! Wire formats:
//!
//! * completions: `POST {base}/chat/completions` with
//!   `{"model", "messages":[{"role":"user","content":...}], "temperature":0}`,
//!   reply text read from `choices[0].message.content`. The judge sends the
//!   image as an `image_url` content part holding a `data:image/png;base64,`
//!   URL.
//! * text-to-image: `POST {base}` with `{"prompt","seed","width","height"}`,
//!   PNG bytes in the response body.
//! * encyclopedia: MediaWiki `action=query` with a one-result search
//!   generator and plain-text extracts.
//! * web search: `GET {base}?key=..&cx=..&q=..&num=..` returning
//!   `{"items":[{"title","snippet","link"}]}`.
//!
//! API keys come from `CTRIP_LLM_KEY`, `CTRIP_T2I_KEY` and `CTRIP_SEARCH_KEY`.

use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::StatusCode;
use serde_json::{json, Value};

use crate::backend::{
    BackendError, CompletionBackend, ImageBackend, JudgeBackend, RateLimiter, Step,
};
use crate::retrieval::{html_to_text, EncyclopediaSource, WebSearchSource};

pub const LLM_KEY_ENV: &str = "CTRIP_LLM_KEY";
pub const T2I_KEY_ENV: &str = "CTRIP_T2I_KEY";
pub const SEARCH_KEY_ENV: &str = "CTRIP_SEARCH_KEY";

/// Shared transport: one connection pool, a per-host limiter and bounded
/// retries on HTTP 429.
#[derive(Clone)]
pub struct HttpTransport {
    client: Client,
    limiter: Arc<RateLimiter>,
    max_rate_limit_retries: u32,
}

impl HttpTransport {
    pub fn new(timeout: Duration, limiter: Arc<RateLimiter>) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(timeout)
            .user_agent(concat!("ctrip/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpTransport {
            client,
            limiter,
            max_rate_limit_retries: 3,
        })
    }

    pub fn with_rate_limit_retries(mut self, n: u32) -> Self {
        self.max_rate_limit_retries = n;
        self
    }

    fn send(
        &self,
        url: &str,
        build: impl Fn(&Client) -> RequestBuilder,
    ) -> Result<Response, BackendError> {
        let host = reqwest::Url::parse(url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_string))
            .unwrap_or_default();
        let mut attempt = 0;
        loop {
            self.limiter.acquire(&host);
            let resp = build(&self.client).send().map_err(map_reqwest)?;
            if resp.status() == StatusCode::TOO_MANY_REQUESTS {
                let retry_after_secs = resp
                    .headers()
                    .get(reqwest::header::RETRY_AFTER)
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .unwrap_or(1);
                if attempt >= self.max_rate_limit_retries {
                    return Err(BackendError::RateLimited { retry_after_secs });
                }
                attempt += 1;
                self.limiter
                    .defer(&host, Duration::from_secs(retry_after_secs));
                continue;
            }
            if !resp.status().is_success() {
                let status = resp.status().as_u16();
                let body = resp.text().unwrap_or_default();
                return Err(BackendError::Status { status, body });
            }
            return Ok(resp);
        }
    }
}

fn map_reqwest(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Transport(e.to_string())
    }
}

fn decode_json(resp: Response) -> Result<Value, BackendError> {
    resp.json::<Value>()
        .map_err(|e| BackendError::InvalidResponse(e.to_string()))
}

fn key_from_env(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|k| !k.is_empty())
}

/// Chat-completions client used both for text steps and for the image judge.
pub struct HttpCompletion {
    transport: HttpTransport,
    base_url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpCompletion {
    pub fn new(
        transport: HttpTransport,
        base_url: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        HttpCompletion {
            transport,
            base_url: base_url.into(),
            model: model.into(),
            api_key: key_from_env(LLM_KEY_ENV),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    fn chat(&self, content: Value) -> Result<String, BackendError> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": 0,
        });
        let resp = self.transport.send(&url, |c| {
            let mut rb = c.post(&url).json(&body);
            if let Some(k) = &self.api_key {
                rb = rb.bearer_auth(k);
            }
            rb
        })?;
        let v = decode_json(resp)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                BackendError::InvalidResponse("missing choices[0].message.content".into())
            })
    }
}

impl CompletionBackend for HttpCompletion {
    fn complete(&self, _step: Step, prompt: &str) -> Result<String, BackendError> {
        self.chat(Value::String(prompt.to_string()))
    }

    fn model_label(&self) -> &str {
        &self.model
    }
}

impl JudgeBackend for HttpCompletion {
    fn judge(&self, prompt: &str, image_png: &[u8]) -> Result<String, BackendError> {
        let data = base64::engine::general_purpose::STANDARD.encode(image_png);
        self.chat(json!([
            {"type": "text", "text": prompt},
            {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{data}")}},
        ]))
    }

    fn model_label(&self) -> &str {
        &self.model
    }
}

pub struct HttpImageBackend {
    transport: HttpTransport,
    url: String,
    label: String,
    width: u32,
    height: u32,
    api_key: Option<String>,
}

impl HttpImageBackend {
    pub fn new(transport: HttpTransport, url: impl Into<String>, label: impl Into<String>) -> Self {
        HttpImageBackend {
            transport,
            url: url.into(),
            label: label.into(),
            width: 768,
            height: 768,
            api_key: key_from_env(T2I_KEY_ENV),
        }
    }

    pub fn with_size(mut self, width: u32, height: u32) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }
}

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

impl ImageBackend for HttpImageBackend {
    fn generate(&self, prompt: &str, seed: u64) -> Result<Vec<u8>, BackendError> {
        let body = json!({
            "prompt": prompt,
            "seed": seed,
            "width": self.width,
            "height": self.height,
        });
        let resp = self.transport.send(&self.url, |c| {
            let mut rb = c.post(&self.url).json(&body);
            if let Some(k) = &self.api_key {
                rb = rb.bearer_auth(k);
            }
            rb
        })?;
        let bytes = resp.bytes().map_err(map_reqwest)?.to_vec();
        if !bytes.starts_with(PNG_MAGIC) {
            return Err(BackendError::InvalidResponse(
                "response is not a PNG".into(),
            ));
        }
        Ok(bytes)
    }

    fn label(&self) -> &str {
        &self.label
    }
}

/// MediaWiki extracts client.
pub struct HttpEncyclopedia {
    transport: HttpTransport,
    api_url: String,
}

impl HttpEncyclopedia {
    pub fn new(transport: HttpTransport, api_url: impl Into<String>) -> Self {
        HttpEncyclopedia {
            transport,
            api_url: api_url.into(),
        }
    }
}

impl EncyclopediaSource for HttpEncyclopedia {
    fn lookup(&self, title: &str) -> Result<Option<String>, BackendError> {
        let params = [
            ("action", "query"),
            ("format", "json"),
            ("generator", "search"),
            ("gsrsearch", title),
            ("gsrlimit", "1"),
            ("prop", "extracts"),
            ("explaintext", "1"),
            ("redirects", "1"),
        ];
        let resp = self
            .transport
            .send(&self.api_url, |c| c.get(&self.api_url).query(&params))?;
        let v = decode_json(resp)?;
        let Some(pages) = v.pointer("/query/pages").and_then(Value::as_object) else {
            return Ok(None);
        };
        let extract = pages
            .values()
            .filter(|p| p.get("missing").is_none())
            .filter_map(|p| p.get("extract").and_then(Value::as_str))
            .map(html_to_text)
            .find(|t| !t.is_empty());
        Ok(extract)
    }
}

pub struct HttpWebSearch {
    transport: HttpTransport,
    url: String,
    engine_id: Option<String>,
    api_key: Option<String>,
}

impl HttpWebSearch {
    pub fn new(transport: HttpTransport, url: impl Into<String>) -> Self {
        HttpWebSearch {
            transport,
            url: url.into(),
            engine_id: None,
            api_key: key_from_env(SEARCH_KEY_ENV),
        }
    }

    pub fn with_engine_id(mut self, cx: Option<String>) -> Self {
        self.engine_id = cx;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }
}

impl WebSearchSource for HttpWebSearch {
    fn search(&self, query: &str, max_results: usize) -> Result<Vec<String>, BackendError> {
        let num = max_results.to_string();
        let mut params: Vec<(&str, &str)> = vec![("q", query), ("num", &num)];
        if let Some(k) = &self.api_key {
            params.push(("key", k));
        }
        if let Some(cx) = &self.engine_id {
            params.push(("cx", cx));
        }
        let resp = self
            .transport
            .send(&self.url, |c| c.get(&self.url).query(&params))?;
        let v = decode_json(resp)?;
        let snippets = v
            .get("items")
            .and_then(Value::as_array)
            .map(|items| {
                items
                    .iter()
                    .filter_map(|it| it.get("snippet").and_then(Value::as_str))
                    .map(html_to_text)
                    .filter(|s| !s.is_empty())
                    .take(max_results)
                    .collect()
            })
            .unwrap_or_default();
        Ok(snippets)
    }
}
