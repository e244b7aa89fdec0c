//! Contracts for the capabilities an investigator holds, and the suite that
//! meters every call against a budget and an optional response cache.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::canonical;
use crate::error::{Error, Result};
use crate::remote::cache::ResponseCache;
use crate::types::{ClassLabel, Description, Embedding, Sample};

/// Text to sample generator.
pub trait Decoder: Send + Sync {
    /// Must be a pure function of its arguments.
    fn decode(&self, description: &Description, seed: u64, generality_level: f64) -> Result<Sample>;
}

pub trait TextEmbedder: Send + Sync {
    fn embed(&self, description: &Description) -> Result<Embedding>;
}

/// Sample embedder plus embedding-to-text captioner.
pub trait ImageEncoder: Send + Sync {
    fn embed(&self, sample: &Sample) -> Result<Embedding>;
    fn caption(&self, sample: &Sample) -> Result<Description>;
}

/// The model under investigation. Only hard labels cross this boundary.
pub trait TargetModel: Send + Sync {
    fn classify(&self, sample: &Sample) -> Result<ClassLabel>;

    fn num_classes(&self) -> Option<usize> {
        None
    }
}

pub trait Summarizer: Send + Sync {
    fn summarize(&self, description: &Description, l: usize, max_words: usize) -> Result<Vec<Description>>;
}

pub trait Grouper: Send + Sync {
    fn group(&self, descriptions: &[Description], target_count: usize) -> Result<Vec<Description>>;
}

pub trait Enricher: Send + Sync {
    fn enrich(&self, description: &Description, n_variants: usize) -> Result<Vec<Description>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Decode,
    EmbedText,
    EmbedImage,
    Caption,
    Classify,
    Summarize,
    Group,
    Enrich,
}

impl OracleKind {
    pub const ALL: [OracleKind; 8] = [
        OracleKind::Decode,
        OracleKind::EmbedText,
        OracleKind::EmbedImage,
        OracleKind::Caption,
        OracleKind::Classify,
        OracleKind::Summarize,
        OracleKind::Group,
        OracleKind::Enrich,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            OracleKind::Decode => "decode",
            OracleKind::EmbedText => "embed_text",
            OracleKind::EmbedImage => "embed_image",
            OracleKind::Caption => "caption",
            OracleKind::Classify => "classify",
            OracleKind::Summarize => "summarize",
            OracleKind::Group => "group",
            OracleKind::Enrich => "enrich",
        }
    }
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-oracle call counts.
pub type BudgetCounts = BTreeMap<OracleKind, u64>;

/// Per-oracle call limits and atomic spend counters.
#[derive(Debug, Default)]
pub struct Budget {
    limits: [Option<u64>; 8],
    spent: [AtomicU64; 8],
}

impl Budget {
    pub fn unlimited() -> Self {
        Budget::default()
    }

    pub fn with_limits(limits: &BudgetCounts) -> Self {
        let mut budget = Budget::default();
        for (kind, limit) in limits {
            budget.limits[kind.index()] = Some(*limit);
        }
        budget
    }

    /// Takes one unit from `kind`'s allowance.
    pub fn acquire(&self, kind: OracleKind) -> Result<()> {
        let i = kind.index();
        let limit = self.limits[i];
        self.spent[i]
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |spent| match limit {
                Some(l) if spent >= l => None,
                _ => Some(spent + 1),
            })
            .map(|_| ())
            .map_err(|_| Error::BudgetExceeded(kind))
    }

    pub fn spent(&self, kind: OracleKind) -> u64 {
        self.spent[kind.index()].load(Ordering::SeqCst)
    }

    pub fn remaining(&self, kind: OracleKind) -> Option<u64> {
        self.limits[kind.index()].map(|l| l.saturating_sub(self.spent(kind)))
    }

    pub fn snapshot(&self) -> BudgetCounts {
        OracleKind::ALL.iter().map(|k| (*k, self.spent(*k))).collect()
    }

    /// Raises every limit by the given extra allowance (used when resuming).
    pub fn extend(&mut self, extra: &BudgetCounts) {
        for (kind, more) in extra {
            let slot = &mut self.limits[kind.index()];
            *slot = Some(slot.unwrap_or(0) + more);
        }
    }
}

/// Difference between two snapshots.
pub fn counts_since(now: &BudgetCounts, before: &BudgetCounts) -> BudgetCounts {
    now.iter()
        .map(|(k, v)| (*k, v.saturating_sub(before.get(k).copied().unwrap_or(0))))
        .collect()
}

/// All oracles an investigation uses, metered.
#[derive(Clone)]
pub struct OracleSuite {
    pub decoder: Arc<dyn Decoder>,
    pub text_embedder: Arc<dyn TextEmbedder>,
    pub image_encoder: Arc<dyn ImageEncoder>,
    pub target: Arc<dyn TargetModel>,
    pub summarizer: Arc<dyn Summarizer>,
    pub grouper: Arc<dyn Grouper>,
    pub enricher: Arc<dyn Enricher>,
    pub budget: Arc<Budget>,
    pub cache: Option<Arc<ResponseCache>>,
}

fn sample_key(sample: &Sample) -> String {
    canonical::digest_hex(sample.payload())
}

impl OracleSuite {
    pub fn with_budget(mut self, budget: Budget) -> Self {
        self.budget = Arc::new(budget);
        self
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_target(mut self, target: Arc<dyn TargetModel>) -> Self {
        self.target = target;
        self
    }

    /// Cache lookup, budget charge, call, cache fill.
    fn metered<T, F>(&self, kind: OracleKind, key: impl FnOnce() -> String, call: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        let key = self.cache.as_ref().map(|_| key());
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(bytes) = cache.get(kind, key) {
                return serde_json::from_slice(&bytes)
                    .map_err(|e| Error::OracleProtocol(format!("corrupt {kind} cache entry: {e}")));
            }
        }
        self.budget.acquire(kind)?;
        let out = call()?;
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            let bytes = serde_json::to_vec(&out).map_err(|e| Error::OracleProtocol(e.to_string()))?;
            cache.put(kind, key, &bytes)?;
        }
        Ok(out)
    }

    pub fn decode(&self, description: &Description, seed: u64, generality_level: f64) -> Result<Sample> {
        if !(0.0..=1.0).contains(&generality_level) {
            return Err(Error::invalid(format!("generality level {generality_level} outside [0, 1]")));
        }
        let sample = self.metered(
            OracleKind::Decode,
            || {
                canonical::render(&json!({
                    "description": description.as_str(),
                    "seed": seed,
                    "generality_level": format!("{:016x}", generality_level.to_bits()),
                }))
            },
            || self.decoder.decode(description, seed, generality_level),
        )?;
        if sample.seed() != seed || sample.source_description() != description {
            return Err(Error::OracleProtocol("decoder did not echo seed and description".into()));
        }
        Ok(sample)
    }

    pub fn embed_text(&self, description: &Description) -> Result<Embedding> {
        self.metered(OracleKind::EmbedText, || description.as_str().to_string(), || {
            self.text_embedder.embed(description)
        })
    }

    pub fn embed_image(&self, sample: &Sample) -> Result<Embedding> {
        self.metered(OracleKind::EmbedImage, || sample_key(sample), || self.image_encoder.embed(sample))
    }

    pub fn caption(&self, sample: &Sample) -> Result<Description> {
        self.metered(OracleKind::Caption, || sample_key(sample), || self.image_encoder.caption(sample))
    }

    pub fn classify(&self, sample: &Sample) -> Result<ClassLabel> {
        self.metered(OracleKind::Classify, || sample_key(sample), || self.target.classify(sample))
    }

    /// At most `l` distinct variants, each at most `max_words` words.
    pub fn summarize(&self, description: &Description, l: usize, max_words: usize) -> Result<Vec<Description>> {
        if l == 0 || max_words == 0 {
            return Err(Error::invalid("summarize needs l >= 1 and max_words >= 1"));
        }
        let raw = self.metered(
            OracleKind::Summarize,
            || canonical::render(&json!({"text": description.as_str(), "l": l, "max_words": max_words})),
            || self.summarizer.summarize(description, l, max_words),
        )?;
        let mut out = dedup(raw);
        out.retain(|d| d.word_count() <= max_words);
        out.truncate(l);
        Ok(out)
    }

    /// At most `min(target_count, descriptions.len())` representatives.
    pub fn group(&self, descriptions: &[Description], target_count: usize) -> Result<Vec<Description>> {
        if descriptions.is_empty() || target_count == 0 {
            return Err(Error::invalid("group needs a non-empty input and target_count >= 1"));
        }
        let texts: Vec<&str> = descriptions.iter().map(|d| d.as_str()).collect();
        let raw = self.metered(
            OracleKind::Group,
            || canonical::render(&json!({"texts": texts, "target_count": target_count})),
            || self.grouper.group(descriptions, target_count),
        )?;
        let mut out = dedup(raw);
        out.truncate(target_count.min(descriptions.len()));
        if out.is_empty() {
            return Err(Error::OracleProtocol("grouper returned no representatives".into()));
        }
        Ok(out)
    }

    pub fn enrich(&self, description: &Description, n_variants: usize) -> Result<Vec<Description>> {
        if n_variants == 0 {
            return Ok(Vec::new());
        }
        let raw = self.metered(
            OracleKind::Enrich,
            || canonical::render(&json!({"text": description.as_str(), "n_variants": n_variants})),
            || self.enricher.enrich(description, n_variants),
        )?;
        let mut out = dedup(raw);
        out.retain(|d| d != description);
        out.truncate(n_variants);
        Ok(out)
    }
}

/// Removes repeats, keeping first occurrences in order.
pub fn dedup(items: Vec<Description>) -> Vec<Description> {
    let mut seen = std::collections::HashSet::new();
    items.into_iter().filter(|d| seen.insert(d.clone())).collect()
}
