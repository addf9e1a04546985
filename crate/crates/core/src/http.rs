//! Blocking JSON-over-HTTP client shared by every external source: a token
//! bucket per client plus bounded retries with exponential backoff.

use std::num::NonZeroU32;
use std::time::Duration;

use governor::clock::{Clock, DefaultClock};
use governor::{DefaultDirectRateLimiter, Quota, RateLimiter};
use reqwest::blocking::{Client, RequestBuilder};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("{url}: not found")]
    NotFound { url: String },
    #[error("{url}: HTTP {status}: {body}")]
    Status {
        url: String,
        status: u16,
        body: String,
    },
    #[error("{url}: unavailable after {attempts} attempts: {last}")]
    Unavailable {
        url: String,
        attempts: u32,
        last: String,
    },
    #[error("{url}: malformed response: {reason}")]
    Malformed { url: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub requests_per_second: u32,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            requests_per_second: 5,
            max_attempts: 5,
            initial_backoff_ms: 500,
            timeout_secs: 60,
        }
    }
}

pub struct HttpClient {
    client: Client,
    limiter: DefaultDirectRateLimiter,
    clock: DefaultClock,
    config: HttpConfig,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient")
            .field("config", &self.config)
            .finish()
    }
}

impl HttpClient {
    pub fn new(config: HttpConfig) -> Self {
        let rps = NonZeroU32::new(config.requests_per_second.max(1)).expect("nonzero");
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .user_agent(concat!("dao-align/", env!("CARGO_PKG_VERSION")))
            .build()
            .expect("http client construction");
        HttpClient {
            client,
            limiter: RateLimiter::direct(Quota::per_second(rps)),
            clock: DefaultClock::default(),
            config,
        }
    }

    fn throttle(&self) {
        while let Err(not_until) = self.limiter.check() {
            std::thread::sleep(not_until.wait_time_from(self.clock.now()));
        }
    }

    fn send(
        &self,
        url: &str,
        build: impl Fn(&Client) -> RequestBuilder,
    ) -> Result<Value, HttpError> {
        let attempts = self.config.max_attempts.max(1);
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut last = String::new();
        for attempt in 1..=attempts {
            self.throttle();
            match build(&self.client).send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json::<Value>().map_err(|e| HttpError::Malformed {
                            url: url.to_string(),
                            reason: e.to_string(),
                        });
                    }
                    if status == StatusCode::NOT_FOUND {
                        return Err(HttpError::NotFound {
                            url: url.to_string(),
                        });
                    }
                    let body = resp.text().unwrap_or_default();
                    if !(status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS) {
                        return Err(HttpError::Status {
                            url: url.to_string(),
                            status: status.as_u16(),
                            body,
                        });
                    }
                    last = format!("HTTP {}", status.as_u16());
                }
                Err(e) => last = e.to_string(),
            }
            tracing::warn!(url, attempt, error = %last, "request failed");
            if attempt < attempts {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(HttpError::Unavailable {
            url: url.to_string(),
            attempts,
            last,
        })
    }

    pub fn get_json(&self, url: &str, headers: &[(&str, &str)]) -> Result<Value, HttpError> {
        self.send(url, |c| {
            headers.iter().fold(
                c.get(url).header("Accept", "application/json"),
                |r, (k, v)| r.header(*k, *v),
            )
        })
    }

    pub fn post_json(
        &self,
        url: &str,
        body: &Value,
        headers: &[(&str, &str)],
    ) -> Result<Value, HttpError> {
        self.send(url, |c| {
            headers
                .iter()
                .fold(c.post(url).json(body), |r, (k, v)| r.header(*k, *v))
        })
    }
}
