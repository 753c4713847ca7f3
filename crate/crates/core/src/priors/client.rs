//! Fetching per-class responses from a chat-completion endpoint, or replaying
//! them from a fixture directory.

use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{assemble_weights, build_prompt, parse_response, PriorMatrix, PromptSlot};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Base URL of the provider, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key. An unset or
    /// empty variable sends no `Authorization` header.
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further attempt.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    3
}

fn default_backoff() -> u64 {
    500
}

const MAX_BACKOFF_MS: u64 = 8_000;

impl EndpointConfig {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        api_key_env: impl Into<String>,
    ) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: api_key_env.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_ms: default_backoff(),
        }
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorSource {
    /// One response file per class, named by [`fixture_file_name`].
    Fixtures(PathBuf),
    Endpoint(EndpointConfig),
}

/// `Jump Up` -> `jump_up.json`.
pub fn fixture_file_name(class_name: &str) -> String {
    let slug: String = class_name
        .trim()
        .chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("{slug}.json")
}

/// Request body for one class; temperature is pinned to 0.
pub fn request_body(model: &str, prompt: &str) -> Value {
    json!({
        "model": model,
        "temperature": 0,
        "messages": [{ "role": "user", "content": prompt }],
    })
}

enum Attempt {
    Retry(String),
    Fail(String),
}

fn post_once(
    agent: &ureq::Agent,
    cfg: &EndpointConfig,
    body: &str,
) -> std::result::Result<String, Attempt> {
    let mut req = agent
        .post(&cfg.url())
        .header("Content-Type", "application/json");
    if let Ok(key) = std::env::var(&cfg.api_key_env) {
        if !key.is_empty() {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
    }
    let mut resp = req.send(body).map_err(|e| Attempt::Retry(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| Attempt::Retry(e.to_string()))?;
    match status {
        200..=299 => {}
        429 | 500..=599 => return Err(Attempt::Retry(format!("status {status}: {text}"))),
        _ => return Err(Attempt::Fail(format!("status {status}: {text}"))),
    }
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Attempt::Fail(format!("bad completion JSON: {e}")))?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| Attempt::Fail("completion has no choices[0].message.content".into()))
}

fn complete(
    agent: &ureq::Agent,
    cfg: &EndpointConfig,
    prompt: &str,
) -> std::result::Result<String, String> {
    let body = request_body(&cfg.model, prompt).to_string();
    let mut delay = cfg.backoff_ms;
    let mut attempt = 0;
    loop {
        match post_once(agent, cfg, &body) {
            Ok(text) => return Ok(text),
            Err(Attempt::Fail(msg)) => return Err(msg),
            Err(Attempt::Retry(msg)) if attempt >= cfg.max_retries => {
                return Err(format!("{msg} (after {} attempts)", attempt + 1))
            }
            Err(Attempt::Retry(_)) => {
                thread::sleep(Duration::from_millis(delay));
                delay = (delay * 2).min(MAX_BACKOFF_MS);
                attempt += 1;
            }
        }
    }
}

fn read_fixture(dir: &Path, class: &str) -> std::result::Result<String, String> {
    let path = dir.join(fixture_file_name(class));
    std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Builds the prior matrix for `class_names`, one response per class.
///
/// Every class is attempted; if any fails, the error lists all failing
/// classes with their reasons.
pub fn fetch_priors(
    class_names: &[String],
    spatial: &[PromptSlot],
    temporal: &[PromptSlot],
    source: &PriorSource,
) -> Result<PriorMatrix> {
    if class_names.is_empty() {
        return Err(Error::validation("no classes to fetch priors for"));
    }
    let agent = match source {
        PriorSource::Endpoint(cfg) => Some(
            ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
                .http_status_as_error(false)
                .build()
                .new_agent(),
        ),
        PriorSource::Fixtures(_) => None,
    };

    let mut rows = Vec::with_capacity(class_names.len());
    let mut failures = Vec::new();
    for class in class_names {
        let text = match source {
            PriorSource::Fixtures(dir) => read_fixture(dir, class),
            PriorSource::Endpoint(cfg) => build_prompt(class, spatial, temporal)
                .map_err(|e| e.to_string())
                .and_then(|prompt| complete(agent.as_ref().unwrap(), cfg, &prompt)),
        };
        match text.and_then(|t| {
            parse_response(&t, spatial.len(), temporal.len()).map_err(|e| e.to_string())
        }) {
            Ok(raw) => rows.push(assemble_weights(&raw)),
            Err(reason) => failures.push((class.clone(), reason)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::PriorFetch(failures));
    }
    PriorMatrix::new(class_names.to_vec(), spatial.len(), temporal.len(), rows)
}
