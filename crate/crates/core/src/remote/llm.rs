//! Summarizer, grouper and enricher backed by a chat-completion endpoint.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use super::{EndpointConfig, HttpClient, API_KEY_ENV};
use crate::canonical;
use crate::error::{Error, Result};
use crate::oracle::{dedup, Enricher, Grouper, Summarizer};
use crate::types::Description;

const SYSTEM: &str = include_str!("../../prompts/system.txt");
const SUMMARIZE: &str = include_str!("../../prompts/summarize.txt");
const GROUP: &str = include_str!("../../prompts/group.txt");
const ENRICH: &str = include_str!("../../prompts/enrich.txt");

pub const REPAIR_INSTRUCTION: &str = "Reply with ONLY a JSON array of strings.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Summarize,
    Group,
    Enrich,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [PromptKind::Summarize, PromptKind::Group, PromptKind::Enrich];

    pub fn name(self) -> &'static str {
        match self {
            PromptKind::Summarize => "summarize",
            PromptKind::Group => "group",
            PromptKind::Enrich => "enrich",
        }
    }

    fn template(self) -> &'static str {
        match self {
            PromptKind::Summarize => SUMMARIZE,
            PromptKind::Group => GROUP,
            PromptKind::Enrich => ENRICH,
        }
    }

    fn fields(self) -> &'static [&'static str] {
        match self {
            PromptKind::Summarize => &["text", "l", "max_words"],
            PromptKind::Group => &["texts", "target_count"],
            PromptKind::Enrich => &["text", "n_variants"],
        }
    }
}

/// Digest of every shipped template, keyed by name (`system` included).
pub fn template_digests() -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    out.insert("system".to_string(), canonical::digest_hex(SYSTEM.as_bytes()));
    for kind in PromptKind::ALL {
        out.insert(kind.name().to_string(), canonical::digest_hex(kind.template().as_bytes()));
    }
    out
}

/// Fills `{field}` placeholders. Lists render one `- item` per line.
pub fn render_prompt(kind: PromptKind, payload: &Value) -> Result<String> {
    let mut text = kind.template().to_string();
    for field in kind.fields() {
        let value = payload
            .get(field)
            .ok_or_else(|| Error::invalid(format!("{} payload is missing `{field}`", kind.name())))?;
        let rendered = match value {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            Value::Array(items) => items
                .iter()
                .map(|i| i.as_str().map(|s| format!("- {s}")))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::invalid(format!("`{field}` must be a list of strings")))?
                .join("\n"),
            _ => return Err(Error::invalid(format!("`{field}` has an unsupported type"))),
        };
        text = text.replace(&format!("{{{field}}}"), &rendered);
    }
    Ok(text)
}

fn parse_string_array(content: &str) -> Option<Vec<String>> {
    serde_json::from_str::<Vec<String>>(content.trim()).ok()
}

fn first_choice(resp: &Value) -> Result<String> {
    resp.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| Error::OracleProtocol("chat completion has no choices[0].message.content".into()))
}

fn complete(client: &HttpClient, messages: &[Value]) -> Result<String> {
    let body = json!({
        "model": client.config().model_name,
        "messages": messages,
        "temperature": 0,
    });
    let key = canonical::digest_hex(canonical::render(&body).as_bytes());
    first_choice(&client.request("/chat/completions", Some(&body), Some(&key))?)
}

fn batch_with(client: &HttpClient, kind: PromptKind, payload: &Value) -> Result<Vec<Description>> {
    let mut messages = vec![
        json!({"role": "system", "content": SYSTEM.trim()}),
        json!({"role": "user", "content": render_prompt(kind, payload)?}),
    ];
    let first = complete(client, &messages)?;
    let strings = match parse_string_array(&first) {
        Some(s) => s,
        None => {
            log::warn!("{} reply was not a JSON array of strings; asking once more", kind.name());
            messages.push(json!({"role": "assistant", "content": first}));
            messages.push(json!({"role": "user", "content": REPAIR_INSTRUCTION}));
            let second = complete(client, &messages)?;
            parse_string_array(&second).ok_or_else(|| {
                log::error!("unparseable {} reply after repair: {second}", kind.name());
                Error::OracleProtocol(format!("{} reply is not a JSON array of strings", kind.name()))
            })?
        }
    };
    Ok(dedup(strings.iter().filter_map(|s| Description::new(s).ok()).collect()))
}

/// One prompt round trip: renders the template, asks for a JSON array of
/// strings (with one repair attempt), canonicalizes and deduplicates.
pub fn llm_batch(kind: PromptKind, payload: &Value, cfg: &EndpointConfig) -> Result<Vec<String>> {
    let client = HttpClient::new(with_env_key(cfg.clone()))?;
    Ok(batch_with(&client, kind, payload)?.into_iter().map(|d| d.as_str().to_string()).collect())
}

/// Summarizer, grouper and enricher sharing one endpoint.
pub struct LlmOracle {
    http: HttpClient,
}

fn with_env_key(mut cfg: EndpointConfig) -> EndpointConfig {
    if cfg.api_key.is_none() {
        cfg.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
    }
    cfg
}

impl LlmOracle {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        Ok(LlmOracle { http: HttpClient::new(with_env_key(cfg))? })
    }
}

impl Summarizer for LlmOracle {
    fn summarize(&self, description: &Description, l: usize, max_words: usize) -> Result<Vec<Description>> {
        batch_with(
            &self.http,
            PromptKind::Summarize,
            &json!({"text": description.as_str(), "l": l, "max_words": max_words}),
        )
    }
}

impl Grouper for LlmOracle {
    fn group(&self, descriptions: &[Description], target_count: usize) -> Result<Vec<Description>> {
        let texts: Vec<&str> = descriptions.iter().map(|d| d.as_str()).collect();
        batch_with(&self.http, PromptKind::Group, &json!({"texts": texts, "target_count": target_count}))
    }
}

impl Enricher for LlmOracle {
    fn enrich(&self, description: &Description, n_variants: usize) -> Result<Vec<Description>> {
        batch_with(
            &self.http,
            PromptKind::Enrich,
            &json!({"text": description.as_str(), "n_variants": n_variants}),
        )
    }
}
