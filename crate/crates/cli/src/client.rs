//! Blocking client for the `/api/v1` REST routes.

use std::time::Duration;

use reqwest::blocking::multipart::{Form, Part};
use reqwest::blocking::{Client as Http, RequestBuilder, Response};
use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot reach server: {0}")]
    Network(String),
    /// Error response from the server, with its JSON body when it sent one.
    #[error("{}", server_message(*status, body))]
    Server { status: u16, body: Value },
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

fn server_message(status: u16, body: &Value) -> String {
    match body["message"].as_str() {
        Some(m) => m.to_string(),
        None => format!("server returned HTTP {status}"),
    }
}

impl CliError {
    /// 1 for connectivity, authentication and server faults; 2 for anything
    /// the user can fix by changing the request.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Network(_) | CliError::Io(_) => 1,
            CliError::Server { status, .. } if *status == 401 || *status >= 500 => 1,
            CliError::Server { .. } | CliError::Validation(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub struct Client {
    base: String,
    key: Option<String>,
    http: Http,
}

/// Accepts `http://host:port` or the full `.../api/v1` base.
pub fn normalize_base(url: &str) -> String {
    let trimmed = url.trim_end_matches('/');
    if trimmed.ends_with("/api/v1") {
        trimmed.to_string()
    } else {
        format!("{trimmed}/api/v1")
    }
}

impl Client {
    pub fn new(url: &str, key: Option<String>, timeout: Duration) -> CliResult<Self> {
        let http = Http::builder().timeout(timeout).build().map_err(|e| CliError::Network(e.to_string()))?;
        Ok(Client { base: normalize_base(url), key, http })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn authed(&self, req: RequestBuilder) -> CliResult<RequestBuilder> {
        match &self.key {
            Some(k) => Ok(req.header("X-API-Key", k)),
            None => Err(CliError::Server {
                status: 401,
                body: serde_json::json!({ "error": "AuthError", "message": "no API key given (use --key or OPENML_LITE_KEY)" }),
            }),
        }
    }

    fn send(req: RequestBuilder) -> CliResult<Response> {
        let resp = req.send().map_err(|e| CliError::Network(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().unwrap_or_default();
        let body = serde_json::from_str(&text).unwrap_or_else(|_| serde_json::json!({ "message": text }));
        Err(CliError::Server { status: status.as_u16(), body })
    }

    fn json<T: DeserializeOwned>(resp: Response) -> CliResult<T> {
        resp.json().map_err(|e| CliError::Network(format!("unreadable response: {e}")))
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str) -> CliResult<T> {
        Self::json(Self::send(self.http.get(self.url(path)))?)
    }

    pub fn get_text(&self, path: &str) -> CliResult<String> {
        Self::send(self.http.get(self.url(path)))?.text().map_err(|e| CliError::Network(e.to_string()))
    }

    pub fn get_with_query<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> CliResult<T> {
        Self::json(Self::send(self.http.get(self.url(path)).query(query))?)
    }

    pub fn post_json<T: DeserializeOwned>(&self, path: &str, body: &Value) -> CliResult<T> {
        Self::json(Self::send(self.authed(self.http.post(self.url(path)).json(body))?)?)
    }

    /// Unauthenticated POST, for the read-only query route.
    pub fn post_public<T: DeserializeOwned>(&self, path: &str, body: &Value) -> CliResult<T> {
        Self::json(Self::send(self.http.post(self.url(path)).json(body))?)
    }

    pub fn post_form<T: DeserializeOwned>(&self, path: &str, form: Form) -> CliResult<T> {
        Self::json(Self::send(self.authed(self.http.post(self.url(path)).multipart(form))?)?)
    }

    pub fn upload_dataset(&self, meta: &Value, data: Option<Vec<u8>>) -> CliResult<Value> {
        let mut form = Form::new().text("description", meta.to_string());
        if let Some(bytes) = data {
            form = form.part("dataset", Part::bytes(bytes).file_name("dataset.arff"));
        }
        self.post_form("/data", form)
    }

    pub fn submit_run(&self, description: &Value, predictions: Vec<u8>) -> CliResult<Value> {
        let form = Form::new()
            .text("description", description.to_string())
            .part("predictions", Part::bytes(predictions).file_name("predictions.arff"));
        self.post_form("/run", form)
    }
}
