//! Blocking JSON-over-HTTP transport with bounded retries and a cap on
//! in-flight requests. Shared by the remote oracle and embedding clients.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Exponential backoff schedule for idempotent requests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 250,
            multiplier: 2,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = u64::from(self.multiplier.max(1)).saturating_pow(retry);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor))
    }
}

fn default_auth_header() -> String {
    "Authorization".to_string()
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout() -> u64 {
    60
}

/// Where and how to reach an HTTP backend. Secrets come only from the
/// environment variable named by `token_env`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpEndpoint {
    pub url: String,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        HttpEndpoint {
            url: url.into(),
            auth_header: default_auth_header(),
            token_env: None,
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
            retry: RetryPolicy::default(),
        }
    }
}

/// Counting semaphore limiting concurrent requests.
#[derive(Debug)]
pub struct InFlightLimiter {
    capacity: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimiter {
    pub fn new(capacity: usize) -> Self {
        InFlightLimiter {
            capacity: capacity.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut used = self.used.lock().expect("limiter lock poisoned");
        while *used >= self.capacity {
            used = self.freed.wait(used).expect("limiter lock poisoned");
        }
        *used += 1;
        InFlightPermit { limiter: self }
    }

    pub fn in_use(&self) -> usize {
        *self.used.lock().expect("limiter lock poisoned")
    }
}

pub struct InFlightPermit<'a> {
    limiter: &'a InFlightLimiter,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut used = self.limiter.used.lock().expect("limiter lock poisoned");
        *used -= 1;
        self.limiter.freed.notify_one();
    }
}

enum Failure {
    Retryable(String),
    Refused(String),
}

pub struct HttpTransport {
    endpoint: HttpEndpoint,
    token: Option<String>,
    client: reqwest::blocking::Client,
    limiter: InFlightLimiter,
}

impl HttpTransport {
    pub fn new(endpoint: HttpEndpoint) -> Result<Self> {
        let token = match &endpoint.token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::config(format!("environment variable {var} holding the auth token is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs.max(1)))
            .build()
            .map_err(|e| Error::config(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpTransport {
            limiter: InFlightLimiter::new(endpoint.max_in_flight),
            endpoint,
            token,
            client,
        })
    }

    pub fn endpoint(&self) -> &HttpEndpoint {
        &self.endpoint
    }

    /// POSTs `body` and returns the parsed JSON response.
    ///
    /// Connection failures, 5xx and 429 are retried per the policy. Other 4xx
    /// statuses and bodies carrying an `error` field are reported as refusals
    /// and never retried.
    pub fn post_json(&self, body: &Value, key: &str) -> Result<Value> {
        let attempts = self.endpoint.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.endpoint.retry.backoff(attempt - 1));
            }
            let outcome = {
                let _permit = self.limiter.acquire();
                self.send_once(body)
            };
            match outcome {
                Ok(value) => return Ok(value),
                Err(Failure::Refused(message)) => {
                    return Err(Error::Refusal {
                        key: key.to_string(),
                        message,
                    })
                }
                Err(Failure::Retryable(message)) => last = message,
            }
        }
        Err(Error::Transport {
            key: key.to_string(),
            attempts,
            message: last,
        })
    }

    fn send_once(&self, body: &Value) -> std::result::Result<Value, Failure> {
        let mut request = self.client.post(&self.endpoint.url).json(body);
        if let Some(token) = &self.token {
            request = request.header(self.endpoint.auth_header.as_str(), format!("Bearer {token}"));
        }
        let response = request.send().map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| Failure::Retryable(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Failure::Retryable(format!("HTTP {status}: {text}")));
        }
        if status.is_client_error() {
            return Err(Failure::Refused(format!("HTTP {status}: {text}")));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Retryable(format!("malformed JSON response: {e}")))?;
        if let Some(err) = value.get("error") {
            let message = err.as_str().map(str::to_owned).unwrap_or_else(|| err.to_string());
            return Err(Failure::Refused(message));
        }
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn backoff_is_exponential() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(0), Duration::from_millis(250));
        assert_eq!(p.backoff(1), Duration::from_millis(500));
        assert_eq!(p.backoff(2), Duration::from_millis(1000));
    }

    #[test]
    fn limiter_bounds_concurrency() {
        let limiter = Arc::new(InFlightLimiter::new(2));
        let peak = Arc::new(Mutex::new(0usize));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let limiter = Arc::clone(&limiter);
                let peak = Arc::clone(&peak);
                thread::spawn(move || {
                    let _p = limiter.acquire();
                    let now = limiter.in_use();
                    let mut pk = peak.lock().unwrap();
                    *pk = (*pk).max(now);
                    drop(pk);
                    thread::sleep(Duration::from_millis(5));
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(*peak.lock().unwrap() <= 2);
        assert_eq!(limiter.in_use(), 0);
    }

    #[test]
    fn missing_token_env_is_a_config_error() {
        let mut ep = HttpEndpoint::new("http://127.0.0.1:9");
        ep.token_env = Some("SETAUDIT_TEST_TOKEN_THAT_IS_NOT_SET".into());
        assert!(matches!(HttpTransport::new(ep), Err(Error::Config(_))));
    }
}
