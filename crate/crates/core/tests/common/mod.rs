#![allow(dead_code)]

pub mod oracle;
pub mod validator;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use domain_bridge::oracle::{Decoder, Enricher, Grouper, ImageEncoder, Summarizer, TargetModel, TextEmbedder};
use domain_bridge::remote::{EndpointConfig, ShimClient};
use domain_bridge::synthetic::Universe;
use domain_bridge::{Description, Error, Sample};
use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

#[derive(Debug, Clone)]
pub struct Recorded {
    pub method: String,
    pub path: String,
    pub body: Option<Value>,
    pub headers: Vec<(String, String)>,
    /// Earlier requests to the same path.
    pub nth: usize,
}

impl Recorded {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

pub type Handler = dyn Fn(&Recorded) -> (u16, String) + Send + Sync;

pub struct MockServer {
    pub url: String,
    server: Arc<Server>,
    requests: Arc<Mutex<Vec<Recorded>>>,
    workers: Vec<JoinHandle<()>>,
}

const WORKERS: usize = 8;

impl MockServer {
    pub fn start(handler: impl Fn(&Recorded) -> (u16, String) + Send + Sync + 'static) -> Self {
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind mock server"));
        let port = server.server_addr().to_ip().expect("ip listener").port();
        let requests: Arc<Mutex<Vec<Recorded>>> = Arc::default();
        let handler: Arc<Handler> = Arc::new(handler);
        let workers = (0..WORKERS)
            .map(|_| {
                let (server, requests, handler) = (server.clone(), requests.clone(), handler.clone());
                std::thread::spawn(move || {
                    while let Ok(mut req) = server.recv() {
                        let mut raw = String::new();
                        let _ = req.as_reader().read_to_string(&mut raw);
                        let path = req.url().to_string();
                        let recorded = {
                            let mut log = requests.lock().unwrap();
                            let r = Recorded {
                                method: req.method().to_string(),
                                nth: log.iter().filter(|r| r.path == path).count(),
                                path,
                                body: (!raw.is_empty()).then(|| serde_json::from_str(&raw).unwrap_or(Value::String(raw))),
                                headers: req
                                    .headers()
                                    .iter()
                                    .map(|h| (h.field.to_string(), h.value.to_string()))
                                    .collect(),
                            };
                            log.push(r.clone());
                            r
                        };
                        let (status, body) = handler(&recorded);
                        let resp = Response::from_string(body)
                            .with_status_code(status)
                            .with_header(Header::from_bytes("Content-Type", "application/json").unwrap());
                        let _ = req.respond(resp);
                    }
                })
            })
            .collect();
        MockServer { url: format!("http://127.0.0.1:{port}"), server, requests, workers }
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }

    pub fn count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/shim")
}

pub fn load_fixtures() -> Vec<Value> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(fixture_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()).collect()
}

/// Chat-completion reply wrapping `content`.
pub fn chat_reply(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

fn b64_encode(bytes: &[u8]) -> String {
    use base64::Engine as _;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn b64_decode(text: &str) -> Vec<u8> {
    use base64::Engine as _;
    base64::engine::general_purpose::STANDARD.decode(text).unwrap()
}

fn error_body(code: &str, message: &str) -> String {
    json!({"error": {"code": code, "message": message}}).to_string()
}

fn words_after<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    let rest = &text[text.find(marker)? + marker.len()..];
    rest.split_whitespace().next()
}

fn answer_prompt(u: &Universe, prompt: &str) -> Result<Vec<Description>, Error> {
    if let Some(rest) = prompt.strip_prefix("Descriptions:\n") {
        let items: Vec<Description> = rest
            .lines()
            .take_while(|l| l.starts_with("- "))
            .map(|l| Description::new(&l[2..]).unwrap())
            .collect();
        let n: usize = words_after(prompt, "Produce at most ").unwrap().parse().unwrap();
        return u.group(&items, n);
    }
    let first = prompt.lines().next().unwrap();
    let desc = Description::new(first.strip_prefix("Description: ").unwrap()).unwrap();
    let n: usize = words_after(prompt, "Write ").unwrap().parse().unwrap();
    if prompt.contains("shorter variants") {
        let w: usize = words_after(prompt, "at most ").unwrap().parse().unwrap();
        u.summarize(&desc, n, w)
    } else {
        u.enrich(&desc, n)
    }
}

fn image_sample(body: &Value) -> Sample {
    let bytes = b64_decode(body["image_b64"].as_str().unwrap());
    assert!(bytes.starts_with(PNG_MAGIC));
    Sample::new(bytes[PNG_MAGIC.len()..].to_vec(), 0, Description::new("probe").unwrap()).unwrap()
}

/// Serves both the shim protocol and a chat endpoint from a synthetic
/// universe. Payloads are the universe's bytes behind a PNG signature.
/// While `down` is set every request gets a 503.
pub fn universe_server(u: Arc<Universe>, down: Arc<AtomicBool>) -> MockServer {
    MockServer::start(move |r| {
        if down.load(Ordering::SeqCst) {
            return (503, error_body("unavailable", "down"));
        }
        let body = r.body.clone().unwrap_or(Value::Null);
        let reply = match r.path.as_str() {
            "/v1/info" => json!({"dim": u.spec().dim, "num_classes": u.spec().classes.len() + 1, "backend": "universe"}),
            "/v1/decode" => {
                let level = body["generality_level"].as_u64().unwrap();
                let seed = body["seed"].as_u64().unwrap();
                let desc = Description::new(body["description"].as_str().unwrap()).unwrap();
                let sample = match u.decode(&desc, seed, (level - 1) as f64 / 11.0) {
                    Ok(s) => s,
                    Err(e) => return (400, error_body("bad_request", &e.to_string())),
                };
                let mut png = PNG_MAGIC.to_vec();
                png.extend_from_slice(sample.payload());
                json!({"image_b64": b64_encode(&png), "format": "png", "seed": seed})
            }
            "/v1/embed_text" => {
                let e = TextEmbedder::embed(&*u, &Description::new(body["text"].as_str().unwrap()).unwrap()).unwrap();
                json!({"embedding": e.values(), "dim": e.dim()})
            }
            "/v1/embed_image" => {
                let e = ImageEncoder::embed(&*u, &image_sample(&body)).unwrap();
                json!({"embedding": e.values(), "dim": e.dim()})
            }
            "/v1/caption" => json!({"description": u.caption(&image_sample(&body)).unwrap().as_str()}),
            "/v1/classify" => json!({"label": u.classify(&image_sample(&body)).unwrap().0}),
            "/chat/completions" => {
                let messages = body["messages"].as_array().unwrap();
                let prompt = messages[1]["content"].as_str().unwrap();
                let out: Vec<String> = match answer_prompt(&u, prompt) {
                    Ok(list) => list.iter().map(|d| d.as_str().to_string()).collect(),
                    Err(_) => Vec::new(),
                };
                return (200, chat_reply(&serde_json::to_string(&out).unwrap()));
            }
            _ => return (404, error_body("not_found", &r.path)),
        };
        (200, reply.to_string())
    })
}

/// Endpoint config for a mock server with no retry delay.
pub fn fast_endpoint(url: &str) -> EndpointConfig {
    EndpointConfig { backoff_secs: 0.0, ..EndpointConfig::new(url) }
}

fn close(actual: &Value, expected: &Value) -> bool {
    match (actual, expected) {
        (Value::Number(a), Value::Number(b)) => (a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-9,
        (Value::Array(a), Value::Array(b)) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(x, y)),
        (Value::Object(a), Value::Object(b)) => {
            a.len() == b.len() && a.iter().all(|(k, v)| b.get(k).is_some_and(|w| close(v, w)))
        }
        _ => actual == expected,
    }
}

fn error_name(e: &Error) -> &'static str {
    match e {
        Error::OracleProtocol(_) => "oracle_protocol",
        Error::OracleUnavailable(_) => "oracle_unavailable",
        _ => "other",
    }
}

/// Replays one golden fixture: the engine call must send exactly the
/// recorded request and turn the recorded response into the expected result.
pub fn check_fixture(fx: &Value) -> Result<(), String> {
    let name = fx["name"].as_str().unwrap_or("?").to_string();
    let response = fx["response"].clone();
    let server = MockServer::start(move |_| {
        (response["status"].as_u64().unwrap() as u16, response["body"].to_string())
    });
    let client = ShimClient::new(EndpointConfig { max_retries: 0, ..fast_endpoint(&server.url) }).unwrap();
    let args = &fx["engine"]["args"];
    let desc = |key: &str| Description::new(args[key].as_str().unwrap()).unwrap();
    let sample = || {
        serde_json::from_value::<Sample>(json!({"payload": args["image_b64"], "seed": 0, "source_description": "fixture"}))
            .unwrap()
    };
    let outcome: Result<Value, Error> = match fx["engine"]["call"].as_str().unwrap() {
        "info" => client.info().map(|i| serde_json::to_value(i).unwrap()),
        "decode" => client
            .decode(&desc("description"), args["seed"].as_u64().unwrap(), args["generality_level"].as_f64().unwrap())
            .map(|s| serde_json::to_value(s).unwrap()),
        "embed_text" => TextEmbedder::embed(&client, &desc("text")).map(|e| json!(e.values())),
        "embed_image" => ImageEncoder::embed(&client, &sample()).map(|e| json!(e.values())),
        "caption" => client.caption(&sample()).map(|d| json!(d.as_str())),
        "classify" => client.classify(&sample()).map(|c| json!(c.0)),
        other => return Err(format!("{name}: unknown call {other}")),
    };
    let requests = server.requests();
    if requests.len() != 1 {
        return Err(format!("{name}: expected one request, saw {}", requests.len()));
    }
    let want = &fx["request"];
    let got = &requests[0];
    if got.method != want["method"].as_str().unwrap() || got.path != want["path"].as_str().unwrap() {
        return Err(format!("{name}: sent {} {}", got.method, got.path));
    }
    let want_body = (!want["body"].is_null()).then(|| want["body"].clone());
    if got.body != want_body {
        return Err(format!("{name}: sent body {:?}, fixture has {:?}", got.body, want_body));
    }
    let expect = &fx["engine"]["expect"];
    match (outcome, expect.get("ok"), expect.get("error")) {
        (Ok(v), Some(ok), _) if close(&v, ok) => Ok(()),
        (Err(e), _, Some(err)) if err.as_str() == Some(error_name(&e)) => Ok(()),
        (got, _, _) => Err(format!("{name}: got {got:?}, expected {expect}")),
    }
}

use domain_bridge::synthetic::{token_name, UniverseSpec};
use domain_bridge::Config;

/// Universe `u` of the optimality suite: 12 tokens, 32 dimensions, at most
/// 3 tokens per description, three 3-token classes.
pub fn suite_spec(u: u64) -> UniverseSpec {
    UniverseSpec::generate(u, 12, 32, 3, &[3, 3, 3], 0.85).unwrap()
}

pub fn suite_config(u: u64) -> Config {
    Config { run_seed: u, lambda: 0.25, m_samples_per_node: 32, n_final_samples: 64, n_enrich_variants: 6, ..Config::default() }
}

pub fn single_tokens(vocab_size: usize) -> Vec<Description> {
    (0..vocab_size).map(|i| Description::new(token_name(i, vocab_size)).unwrap()).collect()
}
