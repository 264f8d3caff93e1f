use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cassette::{prompt_digest, Cassette, CassetteWriter, Exchange};
use crate::http::{CompletionRequest, HttpTransport, Transport, TransportError};
use crate::semaphore::Semaphore;

/// Environment variable holding the API key for live and record modes.
pub const API_KEY_ENV: &str = "GFORGE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Record,
    Replay,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Self::Live),
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            other => Err(format!("unknown backend {other:?} (expected live, record or replay)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Full URL of an OpenAI-compatible chat completions endpoint.
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub cassette: Option<PathBuf>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub max_concurrency: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Replay,
            endpoint: None,
            model: "gpt-4".into(),
            temperature: 0.0,
            cassette: None,
            timeout_secs: 120,
            max_retries: 4,
            backoff_base_ms: 500,
            max_concurrency: 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("authentication rejected (HTTP {status}); check {API_KEY_ENV}")]
    Auth { status: u16 },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("no response after {attempts} attempts: {last}")]
    Timeout { attempts: u32, last: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed model response: {0}")]
    Malformed(String),
    #[error("cassette has no response for prompt digest {digest}")]
    CassetteMiss { digest: String },
    #[error("cassette {path}: {message}")]
    Cassette { path: PathBuf, message: String },
    #[error("{0} is not set")]
    MissingApiKey(&'static str),
    #[error("backend {0:?} needs {1}")]
    Misconfigured(BackendKind, &'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
    pub max_delay: Duration,
}

impl RetryPolicy {
    /// Exponential backoff with jitter in `[delay/2, delay]`.
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base.saturating_mul(1u32 << attempt.min(16)).min(self.max_delay);
        let factor = rand::rng().random_range(0.5..=1.0);
        exp.mul_f64(factor)
    }
}

enum Mode {
    Live(Box<dyn Transport>),
    Record(Box<dyn Transport>, Mutex<CassetteWriter>, PathBuf),
    Replay(Cassette),
}

pub struct Gateway {
    mode: Mode,
    model: String,
    temperature: f64,
    retry: RetryPolicy,
    permits: Semaphore,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("kind", &self.kind())
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    /// Builds a gateway from configuration, reading the API key from the
    /// environment when the mode needs the network.
    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        match config.kind {
            BackendKind::Replay => Self::with_transport(config, None),
            BackendKind::Live | BackendKind::Record => {
                let endpoint = config
                    .endpoint
                    .clone()
                    .ok_or(GatewayError::Misconfigured(config.kind, "an endpoint"))?;
                let key = std::env::var(API_KEY_ENV)
                    .ok()
                    .filter(|k| !k.is_empty())
                    .ok_or(GatewayError::MissingApiKey(API_KEY_ENV))?;
                let transport = HttpTransport::new(endpoint, key, Duration::from_secs(config.timeout_secs));
                Self::with_transport(config, Some(Box::new(transport)))
            }
        }
    }

    /// Builds a gateway over an arbitrary transport. Replay mode ignores it.
    pub fn with_transport(config: &BackendConfig, transport: Option<Box<dyn Transport>>) -> Result<Self, GatewayError> {
        let cassette_path = || {
            config
                .cassette
                .clone()
                .ok_or(GatewayError::Misconfigured(config.kind, "a cassette path"))
        };
        let needs_transport = || transport.ok_or(GatewayError::Misconfigured(config.kind, "a transport"));
        let mode = match config.kind {
            BackendKind::Replay => {
                let path = cassette_path()?;
                let cassette = Cassette::load(&path).map_err(|(path, message)| GatewayError::Cassette { path, message })?;
                Mode::Replay(cassette)
            }
            BackendKind::Record => {
                let path = cassette_path()?;
                let writer = CassetteWriter::open(&path).map_err(|e| GatewayError::Cassette {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                Mode::Record(needs_transport()?, Mutex::new(writer), path)
            }
            BackendKind::Live => Mode::Live(needs_transport()?),
        };
        Ok(Self {
            mode,
            model: config.model.clone(),
            temperature: config.temperature,
            retry: RetryPolicy {
                max_retries: config.max_retries,
                base: Duration::from_millis(config.backoff_base_ms),
                max_delay: Duration::from_secs(30),
            },
            permits: Semaphore::new(config.max_concurrency),
        })
    }

    pub fn kind(&self) -> BackendKind {
        match self.mode {
            Mode::Live(_) => BackendKind::Live,
            Mode::Record(..) => BackendKind::Record,
            Mode::Replay(_) => BackendKind::Replay,
        }
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn digest(&self, prompt: &str) -> String {
        prompt_digest(&self.model, prompt, self.temperature)
    }

    /// Sends `prompt` and returns the exchange. Safe to call from many threads; at
    /// most `max_concurrency` requests are in flight at once.
    pub fn complete(&self, prompt: &str) -> Result<Exchange, GatewayError> {
        let digest = self.digest(prompt);
        let transport = match &self.mode {
            Mode::Replay(cassette) => {
                return cassette.get(&digest).cloned().ok_or(GatewayError::CassetteMiss { digest });
            }
            Mode::Live(t) | Mode::Record(t, ..) => t,
        };
        let request = CompletionRequest {
            model: self.model.clone(),
            prompt: prompt.to_string(),
            temperature: self.temperature,
        };
        let completion = {
            let _permit = self.permits.acquire();
            self.with_retries(|| transport.complete(&request))?
        };
        let exchange = Exchange {
            prompt_digest: digest,
            prompt: request.prompt,
            response: completion.text,
            model: self.model.clone(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            usage: completion.usage,
        };
        if let Mode::Record(_, writer, path) = &self.mode {
            let mut w = writer.lock().unwrap_or_else(|e| e.into_inner());
            w.append(&exchange).map_err(|e| GatewayError::Cassette {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
        Ok(exchange)
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, TransportError>) -> Result<T, GatewayError> {
        let mut attempt = 0;
        loop {
            let err = match call() {
                Ok(v) => return Ok(v),
                Err(e) => e,
            };
            let attempts = attempt + 1;
            let terminal = match &err {
                TransportError::Status { status: 401 | 403, .. } => {
                    let TransportError::Status { status, .. } = err else { unreachable!() };
                    return Err(GatewayError::Auth { status });
                }
                TransportError::Status { status: 429, .. } => GatewayError::RateLimited { attempts },
                TransportError::Status { status, .. } if *status >= 500 => GatewayError::Timeout {
                    attempts,
                    last: err.to_string(),
                },
                TransportError::Timeout | TransportError::Network(_) => GatewayError::Timeout {
                    attempts,
                    last: err.to_string(),
                },
                TransportError::Status { status, body } => {
                    return Err(GatewayError::Http {
                        status: *status,
                        body: body.clone(),
                    })
                }
                TransportError::Malformed(m) => return Err(GatewayError::Malformed(m.clone())),
            };
            if attempt >= self.retry.max_retries {
                return Err(terminal);
            }
            let delay = self.retry.delay(attempt);
            tracing::warn!(attempt = attempts, ?delay, error = %err, "retrying model call");
            std::thread::sleep(delay);
            attempt += 1;
        }
    }
}
