//! Shared helpers for the server integration tests: a background server in a
//! temp dir and a thin raw-HTTP caller that returns status and JSON.

#![allow(dead_code)]

use std::time::{Duration, Instant};

use modelhub_server::{BackgroundServer, ServerConfig};
use reqwest::blocking::multipart::{Form, Part};
use reqwest::blocking::{Client, RequestBuilder};
use reqwest::{Method, StatusCode};
use serde_json::Value;
use tempfile::TempDir;

pub const DCOPF: &str = include_str!("../../../../corpus/dcopf.mhl");
pub const CASE: &[u8] = include_bytes!("../../../../corpus/case3.m");

/// Maximise 3x + 2y over x + y <= cap, x, y >= 0. Optimum 3*cap at (cap, 0).
pub const SMALL_LP: &str = "#@ Model: Small LP
#@ Interface Object: cap
cap = 4
#@ Variable: x
x = variable(2) >= 0
#@ Constraint: c
x[0] + x[1] <= cap
#@ Objective: o
maximize 3*x[0] + 2*x[1]
#@ Problem: p
#@ Execution: info
#@ Output Object: y
y = x[0]
";

pub struct Harness {
    pub server: BackgroundServer,
    pub dir: TempDir,
}

pub fn start(embedded: bool) -> Harness {
    start_with(embedded, |_| {})
}

pub fn start_with(embedded: bool, tweak: impl FnOnce(&mut ServerConfig)) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServerConfig::new(dir.path());
    config.embedded_worker = embedded;
    tweak(&mut config);
    let server = BackgroundServer::start(config).unwrap();
    Harness { server, dir }
}

impl Harness {
    pub fn api(&self, user: &str) -> Api {
        Api::new(&self.server.url(), Some(&self.server.create_token(user, false)))
    }

    pub fn worker_api(&self, user: &str) -> Api {
        Api::new(&self.server.url(), Some(&self.server.create_token(user, true)))
    }
}

#[derive(Clone)]
pub struct Api {
    pub base: String,
    pub token: Option<String>,
    pub http: Client,
}

impl Api {
    pub fn new(base: &str, token: Option<&str>) -> Api {
        Api { base: base.to_string(), token: token.map(str::to_string), http: Client::new() }
    }

    pub fn request(&self, method: Method, path: &str) -> RequestBuilder {
        let r = self.http.request(method, format!("{}/api{path}", self.base));
        match &self.token {
            Some(t) => r.header("Authorization", format!("Token {t}")),
            None => r,
        }
    }

    /// Like `request`, with query parameters.
    pub fn request_q(&self, method: Method, path: &str, query: &[(&str, &str)]) -> RequestBuilder {
        let url = reqwest::Url::parse_with_params(&format!("{}/api{path}", self.base), query).unwrap();
        let r = self.http.request(method, url);
        match &self.token {
            Some(t) => r.header("Authorization", format!("Token {t}")),
            None => r,
        }
    }

    pub fn call(&self, r: RequestBuilder) -> (StatusCode, Value) {
        let resp = r.send().unwrap();
        let status = resp.status();
        let text = resp.text().unwrap();
        let body = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap() };
        (status, body)
    }

    pub fn get(&self, path: &str) -> (StatusCode, Value) {
        self.call(self.request(Method::GET, path))
    }

    pub fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.call(self.request(Method::POST, path).json(&body))
    }

    pub fn put(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.call(self.request(Method::PUT, path).json(&body))
    }

    pub fn delete(&self, path: &str) -> (StatusCode, Value) {
        self.call(self.request(Method::DELETE, path))
    }

    pub fn upload(&self, name: &str, filename: &str, source: &[u8]) -> (StatusCode, Value) {
        let form = Form::new()
            .text("name", name.to_string())
            .part("file", Part::bytes(source.to_vec()).file_name(filename.to_string()));
        self.call(self.request(Method::POST, "/models/").multipart(form))
    }

    /// Uploads and returns the new model id, panicking on failure.
    pub fn create(&self, name: &str, filename: &str, source: &str) -> String {
        let (status, body) = self.upload(name, filename, source.as_bytes());
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body["id"].as_str().unwrap().to_string()
    }

    pub fn put_file(&self, model: &str, name: &str, filename: &str, bytes: &[u8]) -> (StatusCode, Value) {
        let form = Form::new().part("file", Part::bytes(bytes.to_vec()).file_name(filename.to_string()));
        self.call(self.request(Method::PUT, &format!("/models/{model}/interface/files/{name}/")).multipart(form))
    }

    /// Polls an execution until it is terminal.
    pub fn wait(&self, execution: &str, limit: Duration) -> Value {
        let start = Instant::now();
        loop {
            let (status, body) = self.get(&format!("/executions/{execution}/"));
            assert_eq!(status, StatusCode::OK, "{body}");
            if matches!(body["status"].as_str(), Some("success" | "error")) {
                return body;
            }
            assert!(start.elapsed() < limit, "execution {execution} not terminal after {limit:?}: {body}");
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

/// Asserts the documented error body shape and returns the message.
pub fn error_message(status: StatusCode, body: &Value) -> String {
    let err = &body["error"];
    assert_eq!(err["code"].as_u64(), Some(u64::from(status.as_u16())), "{body}");
    err["message"].as_str().expect("error.message is a string").to_string()
}
