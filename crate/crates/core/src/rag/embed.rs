use std::time::Duration;

use serde_json::{json, Value};

use super::RagError;
use crate::registry::Registry;

pub const LEXICAL_DIM: usize = 1024;

pub trait Embedder: Send + Sync {
    /// Recorded in the index so a query cannot mix vector spaces.
    fn name(&self) -> String;
    fn embed(&self, text: &str) -> Result<Vec<f64>, RagError>;
}

/// Lowercased runs of alphanumeric characters.
pub fn terms(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Hashed term frequencies, L2-normalized. Needs no network and no model.
pub struct Lexical;

impl Embedder for Lexical {
    fn name(&self) -> String {
        format!("lexical-{LEXICAL_DIM}")
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RagError> {
        if text.is_empty() {
            return Err(RagError::Embedder { message: "empty text".into(), retriable: false });
        }
        let mut v = vec![0.0; LEXICAL_DIM];
        for t in terms(text) {
            v[(fnv1a64(t.as_bytes()) % LEXICAL_DIM as u64) as usize] += 1.0;
        }
        normalize(&mut v);
        Ok(v)
    }
}

/// Client for an embeddings endpoint speaking `{model, input: [text]}`.
pub struct Remote {
    pub endpoint: String,
    pub model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl Remote {
    /// `api_key_env` names the environment variable holding the key, if any.
    pub fn new(endpoint: &str, model: &str, api_key_env: Option<&str>, timeout: Duration) -> Result<Self, RagError> {
        let api_key = match api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| RagError::Config(format!("environment variable {var} is not set")))?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| RagError::Config(e.to_string()))?;
        Ok(Remote { endpoint: endpoint.to_string(), model: model.to_string(), api_key, client })
    }
}

impl Embedder for Remote {
    fn name(&self) -> String {
        format!("remote-{}", self.model)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RagError> {
        let mut req = self.client.post(&self.endpoint).json(&json!({"model": self.model, "input": [text]}));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let fail = |message: String, retriable| RagError::Embedder { message, retriable };
        let resp = req.send().map_err(|e| fail(format!("request failed: {e}"), true))?;
        let status = resp.status();
        if !status.is_success() {
            let retriable = status.is_server_error() || status.as_u16() == 429;
            return Err(fail(format!("embeddings endpoint returned {status}"), retriable));
        }
        let body: Value = resp.json().map_err(|e| fail(format!("bad response body: {e}"), false))?;
        let arr = body["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| fail("response has no data[0].embedding".into(), false))?;
        let mut v = arr
            .iter()
            .map(|x| x.as_f64().filter(|f| f.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| fail("embedding holds a non-finite or non-numeric value".into(), false))?;
        if v.is_empty() {
            return Err(fail("empty embedding".into(), false));
        }
        normalize(&mut v);
        Ok(v)
    }
}

#[derive(Debug, Clone, Default)]
pub struct EmbedderSpec {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout: Option<Duration>,
}

pub type EmbedderFactory = dyn Fn(&EmbedderSpec) -> Result<Box<dyn Embedder>, RagError> + Send + Sync;

/// `lexical` and `remote`.
pub fn embedders() -> Registry<EmbedderFactory> {
    let mut r: Registry<EmbedderFactory> = Registry::new("embedder");
    r.register("lexical", Box::new(|_: &EmbedderSpec| Ok(Box::new(Lexical) as Box<dyn Embedder>)));
    r.register(
        "remote",
        Box::new(|s: &EmbedderSpec| {
            let endpoint = s.endpoint.as_deref().ok_or_else(|| RagError::Config("remote embedder needs an endpoint".into()))?;
            let model = s.model.as_deref().ok_or_else(|| RagError::Config("remote embedder needs a model".into()))?;
            let timeout = s.timeout.unwrap_or(Duration::from_secs(30));
            Ok(Box::new(Remote::new(endpoint, model, s.api_key_env.as_deref(), timeout)?) as Box<dyn Embedder>)
        }),
    );
    r
}
