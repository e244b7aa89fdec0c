//! Client for the model-shim wire protocol.

use std::sync::OnceLock;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{EndpointConfig, HttpClient};
use crate::canonical;
use crate::error::{Error, Result};
use crate::oracle::{Decoder, ImageEncoder, TargetModel, TextEmbedder};
use crate::types::{decode_b64, encode_b64, ClassLabel, Description, Embedding, Sample};

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Wire generality level: 1 (most specific) to 12 (most general).
pub fn generality_to_wire(generality_level: f64) -> u8 {
    1 + (generality_level.clamp(0.0, 1.0) * 11.0).round() as u8
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShimInfo {
    pub dim: usize,
    pub num_classes: Option<usize>,
    pub backend: String,
}

#[derive(Deserialize)]
struct DecodeResponse {
    image_b64: String,
    format: String,
    seed: u64,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    embedding: Vec<f64>,
    dim: usize,
}

#[derive(Deserialize)]
struct CaptionResponse {
    description: String,
}

#[derive(Deserialize)]
struct ClassifyResponse {
    label: i64,
}

/// Decoder, embedders, captioner and target behind one shim endpoint.
///
/// `/v1/info` is only requested through [`ShimClient::info`], so a run whose
/// oracle calls are all cache hits touches the network not at all.
pub struct ShimClient {
    http: HttpClient,
    info: OnceLock<ShimInfo>,
}

fn parse<T: DeserializeOwned>(endpoint: &str, value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        Error::OracleProtocol(format!("{endpoint}: schema violation at `{}`: {}", e.path(), e.inner()))
    })
}

impl ShimClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        Ok(ShimClient { http: HttpClient::new(cfg)?, info: OnceLock::new() })
    }

    /// Client whose info is already known; skips the `/v1/info` request.
    pub fn with_info(cfg: EndpointConfig, info: ShimInfo) -> Result<Self> {
        let client = ShimClient::new(cfg)?;
        let _ = client.info.set(info);
        Ok(client)
    }

    pub fn endpoint(&self) -> &EndpointConfig {
        self.http.config()
    }

    pub fn info(&self) -> Result<ShimInfo> {
        if let Some(i) = self.info.get() {
            return Ok(i.clone());
        }
        let info: ShimInfo = parse("/v1/info", self.http.request("/v1/info", None, None)?)?;
        if info.dim == 0 {
            return Err(Error::OracleProtocol("/v1/info: dim is 0".into()));
        }
        Ok(self.info.get_or_init(|| info).clone())
    }

    fn call<T: DeserializeOwned>(&self, endpoint: &str, body: Value) -> Result<T> {
        let key = canonical::digest_hex(format!("{endpoint}\n{}", canonical::render(&body)).as_bytes());
        parse(endpoint, self.http.request(endpoint, Some(&body), Some(&key))?)
    }

    fn embedding(&self, endpoint: &str, resp: EmbeddingResponse) -> Result<Embedding> {
        if resp.embedding.len() != resp.dim {
            return Err(Error::OracleProtocol(format!(
                "{endpoint}: {} values but dim {}",
                resp.embedding.len(),
                resp.dim
            )));
        }
        if let Some(info) = self.info.get() {
            if info.dim != resp.dim {
                return Err(Error::OracleProtocol(format!(
                    "{endpoint}: dim {} differs from advertised {}",
                    resp.dim, info.dim
                )));
            }
        }
        Embedding::new(resp.embedding).map_err(|e| Error::OracleProtocol(format!("{endpoint}: {e}")))
    }
}

impl Decoder for ShimClient {
    fn decode(&self, description: &Description, seed: u64, generality_level: f64) -> Result<Sample> {
        let resp: DecodeResponse = self.call(
            "/v1/decode",
            json!({
                "description": description.as_str(),
                "seed": seed,
                "generality_level": generality_to_wire(generality_level),
            }),
        )?;
        if resp.format != "png" {
            return Err(Error::OracleProtocol(format!("/v1/decode: unsupported format `{}`", resp.format)));
        }
        if resp.seed != seed {
            return Err(Error::OracleProtocol(format!("/v1/decode: seed {} echoed for request {seed}", resp.seed)));
        }
        let payload = decode_b64(&resp.image_b64)?;
        if !payload.starts_with(PNG_MAGIC) {
            return Err(Error::OracleProtocol("/v1/decode: payload is not a PNG image".into()));
        }
        Sample::new(payload, seed, description.clone())
    }
}

impl TextEmbedder for ShimClient {
    fn embed(&self, description: &Description) -> Result<Embedding> {
        let resp = self.call("/v1/embed_text", json!({"text": description.as_str()}))?;
        self.embedding("/v1/embed_text", resp)
    }
}

impl ImageEncoder for ShimClient {
    fn embed(&self, sample: &Sample) -> Result<Embedding> {
        let resp = self.call("/v1/embed_image", json!({"image_b64": encode_b64(sample.payload())}))?;
        self.embedding("/v1/embed_image", resp)
    }

    fn caption(&self, sample: &Sample) -> Result<Description> {
        let resp: CaptionResponse = self.call("/v1/caption", json!({"image_b64": encode_b64(sample.payload())}))?;
        Description::new(&resp.description).map_err(|_| Error::OracleProtocol("/v1/caption: empty description".into()))
    }
}

impl TargetModel for ShimClient {
    fn classify(&self, sample: &Sample) -> Result<ClassLabel> {
        let resp: ClassifyResponse = self.call("/v1/classify", json!({"image_b64": encode_b64(sample.payload())}))?;
        let label = usize::try_from(resp.label)
            .map_err(|_| Error::OracleProtocol(format!("/v1/classify: negative label {}", resp.label)))?;
        if let Some(n) = self.info.get().and_then(|i| i.num_classes) {
            if label >= n {
                return Err(Error::OracleProtocol(format!("/v1/classify: label {label} outside {n} classes")));
            }
        }
        Ok(ClassLabel(label))
    }

    fn num_classes(&self) -> Option<usize> {
        self.info.get().and_then(|i| i.num_classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_generality_endpoints() {
        assert_eq!(generality_to_wire(0.0), 1);
        assert_eq!(generality_to_wire(1.0), 12);
        assert_eq!(generality_to_wire(0.5), 7);
        let levels: Vec<u8> = (0..=100).map(|i| generality_to_wire(i as f64 / 100.0)).collect();
        assert!(levels.windows(2).all(|w| w[0] <= w[1]));
    }
}
