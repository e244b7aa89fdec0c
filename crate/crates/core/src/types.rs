//! Value types shared by every module.

use std::fmt;

use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Canonical textual description: trimmed, single-spaced, lowercase.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Description(String);

impl Description {
    pub fn new(text: impl AsRef<str>) -> Result<Self> {
        let canon = canonicalize(text.as_ref());
        if canon.is_empty() {
            return Err(Error::invalid("description is empty after canonicalization"));
        }
        Ok(Description(canon))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn word_count(&self) -> usize {
        self.0.split(' ').count()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.0.split(' ')
    }
}

/// Lowercases and collapses every run of whitespace to a single space.
pub fn canonicalize(text: &str) -> String {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

impl fmt::Display for Description {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Description {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Description {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Description::new(raw).map_err(serde::de::Error::custom)
    }
}

/// Unit vector in the shared text/sample embedding space.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values`. Zero, empty or non-finite input is rejected.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding has no components"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding has non-finite components"));
        }
        let norm = norm(&values);
        if norm == 0.0 {
            return Err(Error::invalid("cannot normalize the zero vector"));
        }
        Ok(Embedding(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Cosine similarity; both sides are unit vectors so this is the dot
    /// product, clamped against rounding.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0).clamp(-1.0, 1.0)
    }
}

impl<'de> Deserialize<'de> for Embedding {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(d)?;
        Embedding::new(raw).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A generated datum. The payload is opaque to the engine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    #[serde(with = "b64")]
    payload: Vec<u8>,
    seed: u64,
    source_description: Description,
}

impl Sample {
    pub fn new(payload: Vec<u8>, seed: u64, source_description: Description) -> Result<Self> {
        if payload.is_empty() {
            return Err(Error::MalformedSample("empty payload".into()));
        }
        Ok(Sample { payload, seed, source_description })
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source_description(&self) -> &Description {
        &self.source_description
    }
}

pub(crate) mod b64 {
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let raw = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(raw)
            .map_err(serde::de::Error::custom)
    }
}

pub(crate) fn encode_b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub(crate) fn decode_b64(text: &str) -> Result<Vec<u8>> {
    base64::engine::general_purpose::STANDARD
        .decode(text)
        .map_err(|e| Error::OracleProtocol(format!("invalid base64: {e}")))
}

/// Hard label emitted by the target model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassLabel(pub usize);

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
