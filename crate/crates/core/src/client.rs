//! Shared request pipeline: per-host rate limiting, an in-run response cache
//! and retry with exponential backoff, layered over a [`Transport`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::transport::{HttpRequest, HttpResponse, Transport, TransportError};

/// Spaces requests to the same host at least `1 / requests_per_second` apart.
/// Slots are reserved under the lock and slept on outside it, so concurrent
/// callers queue fairly without holding the mutex while waiting.
pub struct RateLimiter {
    interval: Option<Duration>,
    next_slot: Mutex<HashMap<String, Instant>>,
}

impl RateLimiter {
    pub fn new(requests_per_second: Option<f64>) -> Self {
        let interval = requests_per_second
            .filter(|rps| *rps > 0.0 && rps.is_finite())
            .map(|rps| Duration::from_secs_f64(1.0 / rps));
        Self {
            interval,
            next_slot: Mutex::new(HashMap::new()),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(None)
    }

    pub fn acquire(&self, host: &str) {
        let Some(interval) = self.interval else {
            return;
        };
        let slot = {
            let mut slots = self.next_slot.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let slot = slots.get(host).copied().filter(|s| *s > now).unwrap_or(now);
            slots.insert(host.to_owned(), slot + interval);
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    /// Attempts after the first one.
    pub retries: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(retries: u32) -> Self {
        Self {
            retries,
            base_backoff: Duration::ZERO,
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        self.base_backoff.saturating_mul(1u32 << attempt.min(16))
    }
}

/// Outcome of a request after retries were exhausted.
#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum RequestError {
    #[error("{source} (after {attempts} attempts)")]
    Transport { source: TransportError, attempts: u32 },
    #[error("HTTP {status} from {url} (after {attempts} attempts)")]
    Status {
        status: u16,
        url: String,
        body: String,
        attempts: u32,
    },
}

impl RequestError {
    pub fn is_timeout(&self) -> bool {
        matches!(
            self,
            RequestError::Transport {
                source: TransportError::Timeout { .. },
                ..
            }
        )
    }
}

fn retryable_status(status: u16) -> bool {
    status == 429 || status >= 500
}

/// The client every remote component shares. Cheap to clone.
#[derive(Clone)]
pub struct HttpClient {
    transport: Arc<dyn Transport>,
    limiter: Arc<RateLimiter>,
    cache: Option<Arc<Mutex<HashMap<String, HttpResponse>>>>,
    retry: RetryPolicy,
}

impl HttpClient {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self {
            transport,
            limiter: Arc::new(RateLimiter::unlimited()),
            cache: None,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_rate_limit(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn with_cache(mut self) -> Self {
        self.cache = Some(Arc::new(Mutex::new(HashMap::new())));
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn cached_entries(&self) -> usize {
        self.cache
            .as_ref()
            .map(|c| c.lock().unwrap_or_else(|e| e.into_inner()).len())
            .unwrap_or(0)
    }

    /// Sends a request. Only 2xx responses are cached. Non-retryable
    /// statuses (4xx other than 429) are returned immediately as
    /// [`RequestError::Status`].
    pub fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, RequestError> {
        let key = self.cache.as_ref().map(|_| request.key());
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(hit) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(key) {
                return Ok(hit.clone());
            }
        }
        let host = request.host();
        let mut attempt = 0u32;
        loop {
            self.limiter.acquire(&host);
            let outcome = self.transport.send(request);
            let attempts = attempt + 1;
            let retry_allowed = attempt < self.retry.retries;
            match outcome {
                Ok(response) if response.is_success() => {
                    if let (Some(cache), Some(key)) = (&self.cache, key) {
                        cache
                            .lock()
                            .unwrap_or_else(|e| e.into_inner())
                            .insert(key, response.clone());
                    }
                    return Ok(response);
                }
                Ok(response) if retry_allowed && retryable_status(response.status) => {
                    log::debug!("HTTP {} from {}, retrying", response.status, request.url);
                }
                Ok(response) => {
                    return Err(RequestError::Status {
                        status: response.status,
                        url: request.url.clone(),
                        body: response.body,
                        attempts,
                    })
                }
                // A replay miss will never succeed on retry.
                Err(source @ TransportError::NotRecorded { .. }) | Err(source @ TransportError::Store(_)) => {
                    return Err(RequestError::Transport { source, attempts })
                }
                Err(source) if retry_allowed => {
                    log::debug!("{source}, retrying");
                }
                Err(source) => return Err(RequestError::Transport { source, attempts }),
            }
            std::thread::sleep(self.retry.delay(attempt));
            attempt += 1;
        }
    }
}
