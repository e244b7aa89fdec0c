//! Oracles served over HTTP: the model shim (decode, embed, caption,
//! classify) and an OpenAI-compatible chat endpoint (summarize, group,
//! enrich).

pub mod cache;
pub mod llm;
pub mod shim;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::oracle::{Budget, OracleSuite};

pub use cache::ResponseCache;
pub use llm::{llm_batch, LlmOracle, PromptKind};
pub use shim::{generality_to_wire, ShimClient, ShimInfo};

pub const API_KEY_ENV: &str = "DOMAIN_BRIDGE_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    pub base_url: String,
    /// Never serialized. Chat endpoints fall back to the API key environment
    /// variable when this is unset.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model_name: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff_secs: f64,
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: String::new(),
            api_key: None,
            model_name: String::new(),
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_secs: 1.0,
            max_in_flight: 4,
        }
    }
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        EndpointConfig { base_url: base_url.into(), ..EndpointConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_url.is_empty() {
            return Err(Error::invalid("endpoint base_url is empty"));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::invalid("endpoint timeout must be positive"));
        }
        if !(self.backoff_secs >= 0.0 && self.backoff_secs.is_finite()) {
            return Err(Error::invalid("endpoint backoff must be non-negative"));
        }
        if self.max_in_flight == 0 {
            return Err(Error::invalid("endpoint max_in_flight must be at least 1"));
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let cfg: EndpointConfig = serde_path_to_error::deserialize(de)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Suite whose generative, embedding and target oracles live behind a
/// shim endpoint and whose text rewriting uses a chat endpoint.
pub fn remote_suite(shim: EndpointConfig, llm: EndpointConfig, cache: Option<Arc<ResponseCache>>) -> Result<OracleSuite> {
    let shim = Arc::new(ShimClient::new(shim)?);
    let llm = Arc::new(LlmOracle::new(llm)?);
    Ok(OracleSuite {
        decoder: shim.clone(),
        text_embedder: shim.clone(),
        image_encoder: shim.clone(),
        target: shim,
        summarizer: llm.clone(),
        grouper: llm.clone(),
        enricher: llm,
        budget: Arc::new(Budget::unlimited()),
        cache,
    })
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Gate { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn enter(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Blocking JSON client with retries, backoff and a concurrency bound.
pub(crate) struct HttpClient {
    cfg: EndpointConfig,
    agent: ureq::Agent,
    gate: Gate,
}

const MAX_BODY_BYTES: u64 = 256 * 1024 * 1024;

impl HttpClient {
    pub(crate) fn new(cfg: EndpointConfig) -> Result<Self> {
        cfg.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate::new(cfg.max_in_flight);
        Ok(HttpClient { cfg, agent, gate })
    }

    pub(crate) fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path.trim_start_matches('/'))
    }

    /// POSTs `body`, or GETs when it is `None`. Retries transport failures
    /// and non-200 statuses; the idempotency key is the same on every try.
    pub(crate) fn request(&self, path: &str, body: Option<&Value>, idempotency_key: Option<&str>) -> Result<Value> {
        let url = self.url(path);
        let payload = body.map(|b| b.to_string());
        let mut last_error = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let delay = self.cfg.backoff_secs * 2f64.powi(attempt as i32 - 1);
                std::thread::sleep(Duration::from_secs_f64(delay));
            }
            let outcome = {
                let _permit = self.gate.enter();
                self.send_once(&url, payload.as_deref(), idempotency_key)
            };
            match outcome {
                Ok(text) => {
                    return serde_json::from_str(&text)
                        .map_err(|e| Error::OracleProtocol(format!("{url}: response is not JSON: {e}")));
                }
                Err(msg) => {
                    log::warn!("{url}: attempt {} failed: {msg}", attempt + 1);
                    last_error = msg;
                }
            }
        }
        Err(Error::OracleUnavailable(format!(
            "{url}: {} attempts failed, last: {last_error}",
            self.cfg.max_retries + 1
        )))
    }

    fn send_once(&self, url: &str, payload: Option<&str>, idempotency_key: Option<&str>) -> Result<String, String> {
        let auth = self.cfg.api_key.as_ref().map(|k| format!("Bearer {k}"));
        let result = match payload {
            Some(p) => {
                let mut req = self.agent.post(url).header("Content-Type", "application/json");
                if let Some(key) = idempotency_key {
                    req = req.header("X-Idempotency-Key", key);
                }
                if let Some(a) = &auth {
                    req = req.header("Authorization", a);
                }
                req.send(p)
            }
            None => {
                let mut req = self.agent.get(url);
                if let Some(a) = &auth {
                    req = req.header("Authorization", a);
                }
                req.call()
            }
        };
        let mut resp = result.map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_string()
            .map_err(|e| e.to_string())?;
        if status != 200 {
            return Err(format!("HTTP {status}: {}", error_message(&text)));
        }
        Ok(text)
    }
}

/// Extracts `error.code: error.message` from a protocol error object.
fn error_message(body: &str) -> String {
    #[derive(Deserialize)]
    struct Envelope {
        error: Inner,
    }
    #[derive(Deserialize)]
    struct Inner {
        code: String,
        message: String,
    }
    match serde_json::from_str::<Envelope>(body) {
        Ok(e) => format!("{}: {}", e.error.code, e.error.message),
        Err(_) => body.chars().take(200).collect(),
    }
}
