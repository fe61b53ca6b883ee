//! Shared plumbing for the remote embeddings and chat backends: bearer-token
//! JSON POSTs with bounded retries and an in-flight request cap.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use thiserror::Error;

pub(crate) const DEFAULT_MAX_RETRIES: u32 = 3;
pub(crate) const DEFAULT_RETRY_BASE_DELAY: Duration = Duration::from_millis(250);
pub(crate) const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub(crate) enum RemoteError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("api key environment variable {0} is not set")]
    MissingApiKey(String),
}

/// Caps concurrent in-flight requests. Callers hold the returned guard for
/// the duration of the request.
pub(crate) struct RequestGate {
    permits: Mutex<usize>,
    available: Condvar,
}

impl RequestGate {
    pub(crate) fn new(max_in_flight: usize) -> Self {
        RequestGate {
            permits: Mutex::new(max_in_flight.max(1)),
            available: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> GateGuard<'_> {
        let mut permits = self.permits.lock().expect("gate lock");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("gate wait");
        }
        *permits -= 1;
        GateGuard { gate: self }
    }
}

pub(crate) struct GateGuard<'a> {
    gate: &'a RequestGate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.gate.permits.lock().expect("gate lock");
        *permits += 1;
        self.gate.available.notify_one();
    }
}

/// POST `body` to `url` with bearer auth, retrying transport failures and
/// 5xx responses up to `max_retries` additional attempts with exponential
/// backoff. 4xx responses fail fast with their status.
pub(crate) fn post_json_with_retry(
    http: &reqwest::blocking::Client,
    url: &str,
    api_key: &str,
    body: &serde_json::Value,
    max_retries: u32,
    base_delay: Duration,
) -> Result<serde_json::Value, RemoteError> {
    let mut last_message = String::new();
    let attempts = max_retries + 1;
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(base_delay * 2u32.pow(attempt - 1));
        }
        let sent = http.post(url).bearer_auth(api_key).json(body).send();
        match sent {
            Ok(resp) => {
                let status = resp.status();
                let text = resp.text().unwrap_or_default();
                if status.is_success() {
                    return serde_json::from_str(&text)
                        .map_err(|e| RemoteError::Malformed(format!("{e}: {}", truncate(&text))));
                }
                if status.is_server_error() {
                    last_message = format!("HTTP {}: {}", status.as_u16(), truncate(&text));
                    continue;
                }
                return Err(RemoteError::Http {
                    status: status.as_u16(),
                    message: truncate(&text),
                });
            }
            Err(e) => {
                last_message = e.to_string();
            }
        }
    }
    Err(RemoteError::Transport {
        attempts,
        message: last_message,
    })
}

pub(crate) fn api_key_from_env(var: &str) -> Result<String, RemoteError> {
    std::env::var(var).map_err(|_| RemoteError::MissingApiKey(var.to_owned()))
}

fn truncate(text: &str) -> String {
    const LIMIT: usize = 200;
    if text.len() <= LIMIT {
        text.to_owned()
    } else {
        let mut end = LIMIT;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &text[..end])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn gate_caps_concurrency() {
        let gate = Arc::new(RequestGate::new(2));
        let current = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let gate = Arc::clone(&gate);
                let current = Arc::clone(&current);
                let peak = Arc::clone(&peak);
                std::thread::spawn(move || {
                    let _guard = gate.acquire();
                    let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    current.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
