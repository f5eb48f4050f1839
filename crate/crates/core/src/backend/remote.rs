//! JSON-over-HTTP client for real log-probability backends.
//!
//! Wire protocol:
//!
//! ```text
//! POST /v1/score   {"context_tokens": [..], "candidates": [[..], ..]} -> {"logprobs": [..]}
//! POST /v1/health  -> {"status": "ok"}
//! ```
//!
//! Malformed requests are answered with HTTP 400 and `{"error": ".."}`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{check_score_request, BackendError, Capabilities, ScoringBackend};
use crate::vocab::{SemanticId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub context_tokens: Vec<String>,
    pub candidates: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct ErrorBody {
    error: String,
}

#[derive(Debug, Deserialize)]
struct HealthBody {
    status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub url: String,
    /// Upper bound on concurrent in-flight requests from one client.
    pub max_in_flight: usize,
    pub timeout_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8080".into(),
            max_in_flight: 4,
            timeout_ms: 30_000,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub(crate) struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub(crate) struct Permit<'a>(&'a Limiter);

impl Limiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug)]
pub(crate) enum PostError {
    Transport(String),
    Status(u16, String),
    Decode(String),
}

pub(crate) fn post_json<B: Serialize, R: DeserializeOwned>(
    agent: &ureq::Agent,
    url: &str,
    body: &B,
) -> Result<R, PostError> {
    let body = serde_json::to_string(body).map_err(|e| PostError::Decode(e.to_string()))?;
    match agent
        .post(url)
        .set("Content-Type", "application/json")
        .send_string(&body)
    {
        Ok(resp) => {
            let text = resp.into_string().map_err(|e| PostError::Transport(e.to_string()))?;
            serde_json::from_str(&text).map_err(|e| PostError::Decode(e.to_string()))
        }
        Err(ureq::Error::Status(code, resp)) => {
            let text = resp.into_string().unwrap_or_default();
            let msg = serde_json::from_str::<ErrorBody>(&text)
                .map(|b| b.error)
                .unwrap_or(text);
            Err(PostError::Status(code, msg))
        }
        Err(ureq::Error::Transport(t)) => Err(PostError::Transport(t.to_string())),
    }
}

pub(crate) fn agent(timeout_ms: u64) -> ureq::Agent {
    ureq::AgentBuilder::new()
        .timeout(Duration::from_millis(timeout_ms))
        .build()
}

pub(crate) fn endpoint(base: &str, path: &str) -> String {
    format!("{}{}", base.trim_end_matches('/'), path)
}

/// A backend that delegates scoring to a server speaking the score protocol.
/// Only whole-candidate scores are available remotely.
#[derive(Debug)]
pub struct RemoteBackend {
    config: RemoteConfig,
    vocab: Vocabulary,
    agent: ureq::Agent,
    limiter: Limiter,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig, vocab: Vocabulary) -> Result<Self, BackendError> {
        if !(config.url.starts_with("http://") || config.url.starts_with("https://")) {
            return Err(BackendError::InvalidConfig(format!("`{}` is not an http(s) URL", config.url)));
        }
        if config.max_in_flight == 0 {
            return Err(BackendError::InvalidConfig("max_in_flight must be >= 1".into()));
        }
        Ok(Self {
            agent: agent(config.timeout_ms),
            limiter: Limiter::new(config.max_in_flight),
            config,
            vocab,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let _permit = self.limiter.acquire();
        post_json(&self.agent, &endpoint(&self.config.url, path), body).map_err(|e| match e {
            PostError::Transport(m) => BackendError::BackendUnavailable(m),
            PostError::Status(code, m) => BackendError::Protocol(format!("HTTP {code}: {m}")),
            PostError::Decode(m) => BackendError::Protocol(format!("undecodable response: {m}")),
        })
    }

    pub fn health(&self) -> Result<(), BackendError> {
        let body: HealthBody = self.post("/v1/health", &serde_json::json!({}))?;
        if body.status == "ok" {
            Ok(())
        } else {
            Err(BackendError::BackendUnavailable(format!("health status `{}`", body.status)))
        }
    }
}

impl ScoringBackend for RemoteBackend {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_attention: false,
            supports_full_distribution: false,
        }
    }

    fn score_candidates(
        &self,
        context: &[String],
        candidates: &[SemanticId],
    ) -> Result<Vec<f64>, BackendError> {
        check_score_request(&self.vocab, context, candidates)?;
        let request = ScoreRequest {
            context_tokens: context.to_vec(),
            candidates: candidates.iter().map(|c| self.vocab.sid_tokens(c)).collect(),
        };
        let response: ScoreResponse = self.post("/v1/score", &request)?;
        if response.logprobs.len() != candidates.len() {
            return Err(BackendError::Protocol(format!(
                "expected {} logprobs, received {}",
                candidates.len(),
                response.logprobs.len()
            )));
        }
        if let Some(bad) = response.logprobs.iter().find(|lp| !lp.is_finite() || **lp > 0.0) {
            return Err(BackendError::Protocol(format!("log-probability {bad} is not finite and <= 0")));
        }
        Ok(response.logprobs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn limiter_bounds_concurrency() {
        let limiter = Arc::new(Limiter::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (limiter, live, peak) = (limiter.clone(), live.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _p = limiter.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn rejects_bad_config() {
        let vocab = Vocabulary::new(1, 2, vec![]).unwrap();
        assert!(RemoteBackend::new(RemoteConfig { url: "ftp://x".into(), ..Default::default() }, vocab.clone()).is_err());
        assert!(RemoteBackend::new(RemoteConfig { max_in_flight: 0, ..Default::default() }, vocab).is_err());
    }

    #[test]
    fn unreachable_server_is_unavailable() {
        let vocab = Vocabulary::new(1, 2, vec![]).unwrap();
        let b = RemoteBackend::new(
            RemoteConfig { url: "http://127.0.0.1:9".into(), timeout_ms: 500, ..Default::default() },
            vocab,
        )
        .unwrap();
        let ctx = vec![crate::vocab::SID_BEGIN.to_string()];
        assert!(matches!(
            b.score_candidates(&ctx, &[SemanticId::new(vec![0])]),
            Err(BackendError::BackendUnavailable(_))
        ));
        assert!(matches!(
            b.next_token_dist(&ctx),
            Err(BackendError::UnsupportedCapability(_))
        ));
    }
}
