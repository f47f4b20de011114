//! Contracts for the external model services the pipeline talks to.
//!
//! Every service sits behind a small trait so the batch commands run the same
//! way against a deployed endpoint, a scripted mock or a deterministic stub.

use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited (retry after {retry_after_secs}s)")]
    RateLimited { retry_after_secs: u64 },
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("{0}")]
    Other(String),
}

impl BackendError {
    /// True for failures caused by the network or the remote service rather
    /// than by our own inputs.
    pub fn is_transport(&self) -> bool {
        !matches!(self, BackendError::Other(_))
    }
}

/// Which pipeline step a completion request belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Refine,
    Score,
    Feedback,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Step::Refine => "refine",
            Step::Score => "score",
            Step::Feedback => "feedback",
        })
    }
}

/// Text completion service used by the refine, scoring and feedback steps.
///
/// The step tag lets mocks route requests; HTTP implementations ignore it.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, step: Step, prompt: &str) -> Result<String, BackendError>;
    fn model_label(&self) -> &str;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, step: Step, prompt: &str) -> Result<String, BackendError> {
        (**self).complete(step, prompt)
    }
    fn model_label(&self) -> &str {
        (**self).model_label()
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, step: Step, prompt: &str) -> Result<String, BackendError> {
        (**self).complete(step, prompt)
    }
    fn model_label(&self) -> &str {
        (**self).model_label()
    }
}

/// Multimodal judge: a text prompt plus one PNG image in, text out.
pub trait JudgeBackend: Send + Sync {
    fn judge(&self, prompt: &str, image_png: &[u8]) -> Result<String, BackendError>;
    fn model_label(&self) -> &str;
}

/// Text-to-image service. Must return PNG bytes.
pub trait ImageBackend: Send + Sync {
    fn generate(&self, prompt: &str, seed: u64) -> Result<Vec<u8>, BackendError>;
    fn label(&self) -> &str;
}

impl<B: ImageBackend + ?Sized> ImageBackend for Box<B> {
    fn generate(&self, prompt: &str, seed: u64) -> Result<Vec<u8>, BackendError> {
        (**self).generate(prompt, seed)
    }
    fn label(&self) -> &str {
        (**self).label()
    }
}

/// Spaces outbound requests to the same host at least `min_interval` apart.
#[derive(Debug)]
pub struct RateLimiter {
    min_interval: Duration,
    next_slot: Mutex<HashMap<String, Instant>>,
}

impl RateLimiter {
    pub fn new(min_interval: Duration) -> Self {
        RateLimiter {
            min_interval,
            next_slot: Mutex::new(HashMap::new()),
        }
    }

    /// Blocks until a request to `host` may be sent.
    pub fn acquire(&self, host: &str) {
        let wait = {
            let mut slots = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let slot = slots.get(host).copied().unwrap_or(now).max(now);
            slots.insert(host.to_string(), slot + self.min_interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    /// Pushes the next slot for `host` out by `delay` (used after a 429).
    pub fn defer(&self, host: &str, delay: Duration) {
        let mut slots = self.next_slot.lock().unwrap();
        let at = Instant::now() + delay;
        let slot = slots.entry(host.to_string()).or_insert(at);
        *slot = (*slot).max(at);
    }
}

impl Default for RateLimiter {
    fn default() -> Self {
        RateLimiter::new(Duration::ZERO)
    }
}
