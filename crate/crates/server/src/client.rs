//! Blocking API client used by the `client` subcommands.

use std::path::Path;
use std::time::Duration;

use lbsn_core::identity::extract_code;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::api::API_PREFIX;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{code}: {message}")]
    Api {
        status: u16,
        code: String,
        message: String,
        recovery_hint: Option<bool>,
    },
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }

    /// The error in the API's JSON envelope shape.
    pub fn to_json(&self) -> Value {
        match self {
            ClientError::Api {
                code,
                message,
                recovery_hint,
                ..
            } => {
                let mut e = serde_json::json!({ "code": code, "message": message });
                if let Some(h) = recovery_hint {
                    e["recovery_hint"] = Value::Bool(*h);
                }
                serde_json::json!({ "error": e })
            }
            other => serde_json::json!({ "error": { "code": "ClientError", "message": other.to_string() } }),
        }
    }
}

/// What `client login` stores between invocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFile {
    pub server: String,
    pub username: String,
    pub token: String,
}

impl SessionFile {
    pub fn load(path: &Path) -> Option<SessionFile> {
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self).expect("serializes"))
    }
}

pub struct Client {
    base: String,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(base: &str) -> Client {
        Client {
            base: base.trim_end_matches('/').to_string(),
            token: None,
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(60))
                .build()
                .expect("http client"),
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Client {
        self.token = token;
        self
    }

    pub fn set_token(&mut self, token: Option<String>) {
        self.token = token;
    }

    fn request(&self, method: &str, path: &str) -> Result<reqwest::blocking::RequestBuilder, ClientError> {
        let method = reqwest::Method::from_bytes(method.to_ascii_uppercase().as_bytes())
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let path = if path.starts_with('/') { path.to_string() } else { format!("/{path}") };
        let mut rb = self.http.request(method, format!("{}{API_PREFIX}{path}", self.base));
        if let Some(t) = &self.token {
            rb = rb.bearer_auth(t);
        }
        Ok(rb)
    }

    fn finish(resp: reqwest::blocking::Response) -> Result<Value, ClientError> {
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        let v: Value = serde_json::from_str(&text).map_err(|_| ClientError::Decode(text.clone()))?;
        if let Some(ok) = v.get("ok") {
            return Ok(ok.clone());
        }
        match v.get("error") {
            Some(e) => Err(ClientError::Api {
                status,
                code: e["code"].as_str().unwrap_or_default().to_string(),
                message: e["message"].as_str().unwrap_or_default().to_string(),
                recovery_hint: e.get("recovery_hint").and_then(Value::as_bool),
            }),
            None => Err(ClientError::Decode(text)),
        }
    }

    /// Sends a JSON request and returns the `ok` payload.
    pub fn call(&self, method: &str, path: &str, body: Option<&Value>) -> Result<Value, ClientError> {
        let mut rb = self.request(method, path)?;
        if let Some(b) = body {
            rb = rb.json(b);
        }
        let resp = rb.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        Self::finish(resp)
    }

    pub fn get(&self, path: &str) -> Result<Value, ClientError> {
        self.call("GET", path, None)
    }

    pub fn post(&self, path: &str, body: Value) -> Result<Value, ClientError> {
        self.call("POST", path, Some(&body))
    }

    /// Raw download (tiles, blobs). Errors still come back as JSON.
    pub fn get_bytes(&self, path: &str) -> Result<(String, Vec<u8>), ClientError> {
        let resp = self
            .request("GET", path)?
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let ctype = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or_default()
            .to_string();
        if !resp.status().is_success() || ctype.starts_with("application/json") {
            return Self::finish(resp).and_then(|v| Err(ClientError::Decode(v.to_string())));
        }
        let bytes = resp.bytes().map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok((ctype, bytes.to_vec()))
    }

    pub fn upload(&self, bytes: Vec<u8>, media: &str) -> Result<Value, ClientError> {
        let resp = self
            .request("POST", "/blob")?
            .header(reqwest::header::CONTENT_TYPE, media)
            .body(bytes)
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Self::finish(resp)
    }
}

/// Latest six-digit code written to the SMS outbox file for `phone`.
pub fn outbox_code(path: &Path, phone: &str) -> Option<String> {
    let text = std::fs::read_to_string(path).ok()?;
    text.lines()
        .rev()
        .filter_map(|l| {
            let mut cols = l.splitn(3, '\t');
            let (_, p, msg) = (cols.next()?, cols.next()?, cols.next()?);
            (p == phone).then(|| extract_code(msg)).flatten()
        })
        .next()
}
