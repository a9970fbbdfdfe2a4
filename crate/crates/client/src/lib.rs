//! Blocking client for the modelhub REST API.
//!
//! ```no_run
//! use modelhub_client::Interface;
//!
//! let interface = Interface::new("http://127.0.0.1:8000", "0123abcd...")?;
//! let mut model = interface.get_model_with_name("DCOPF Model")?;
//! model.set_interface_object("feastol", 1e-3)?;
//! model.set_interface_file("case", "ieee14.m")?;
//! println!("{}", model.show_recipe()?);
//! println!("{}", model.show_components()?);
//! model.run()?;
//! println!("{}", model.get_status()?);
//! println!("{}", model.get_execution_log()?);
//! # Ok::<(), modelhub_client::ClientError>(())
//! ```

mod worker;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use modelhub_core::wire::{
    ErrorBody, ExecutionRecord, ExecutionStatus, LogPage, ModelRecord, ModelSummary, ResultsReport, SetObject,
    StatusReport,
};
use modelhub_core::{ComponentRow, Recipe, RecipeEntry};
use reqwest::blocking::{multipart, Client, RequestBuilder, Response};
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde_json::Value;
use url::Url;

pub use worker::WorkerClient;

/// Idempotent GETs are retried this many times after a transport failure.
pub const GET_RETRIES: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server returned {status}: {message}")]
    Api { status: u16, message: String, detail: Option<Value> },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("execution {execution_id} did not finish within {waited:?}")]
    Timeout { execution_id: String, waited: Duration },
    #[error("invalid base URL {url:?}: {reason}")]
    InvalidUrl { url: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl ClientError {
    /// HTTP status of an error response, if the server produced one.
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::NotFound(_) => Some(404),
            _ => None,
        }
    }
}

pub type Result<T, E = ClientError> = std::result::Result<T, E>;

/// A session with one server, authenticated by one token.
///
/// Safe to share between threads; concurrent mutations of one model are the
/// caller's to order.
#[derive(Debug, Clone)]
pub struct Interface {
    base: Url,
    token: String,
    http: Client,
    poll_interval: Duration,
    timeout: Duration,
}

impl Interface {
    pub fn new(url: &str, token: &str) -> Result<Self> {
        let invalid = |reason: &str| ClientError::InvalidUrl { url: url.to_string(), reason: reason.to_string() };
        let base = Url::parse(url).map_err(|e| invalid(&e.to_string()))?;
        if !matches!(base.scheme(), "http" | "https") || base.host().is_none() {
            return Err(invalid("expected http://host[:port]"));
        }
        if base.path() != "/" || base.query().is_some() || base.fragment().is_some() {
            return Err(invalid("the URL must not have a path, query or fragment"));
        }
        let http = Client::builder().timeout(None).build()?;
        Ok(Interface {
            base,
            token: token.to_string(),
            http,
            poll_interval: Duration::from_millis(500),
            timeout: Duration::from_secs(600),
        })
    }

    pub fn with_poll_interval(mut self, every: Duration) -> Self {
        self.poll_interval = every;
        self
    }

    /// How long `run` waits for a terminal status.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn base_url(&self) -> &Url {
        &self.base
    }

    /// Builds `/api/<segments>/` with each segment percent-encoded.
    pub(crate) fn url(&self, segments: &[&str]) -> Url {
        let mut url = self.base.clone();
        {
            let mut path = url.path_segments_mut().expect("http URLs have paths");
            path.clear().push("api");
            path.extend(segments);
            path.push("");
        }
        url
    }

    pub(crate) fn request(&self, method: Method, url: Url) -> RequestBuilder {
        self.http.request(method, url).header("Authorization", format!("Token {}", self.token))
    }

    pub(crate) fn check(response: Response) -> Result<Response> {
        let status = response.status();
        if status.is_success() {
            return Ok(response);
        }
        let text = response.text().unwrap_or_default();
        let (message, detail) = match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => (body.error.message, body.error.detail),
            Err(_) => (text, None),
        };
        Err(ClientError::Api { status: status.as_u16(), message, detail })
    }

    /// Sends a request once; mutating calls are never retried.
    pub(crate) fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T> {
        Ok(Self::check(req.timeout(Duration::from_secs(60)).send()?)?.json()?)
    }

    pub(crate) fn send_empty(&self, req: RequestBuilder) -> Result<()> {
        Self::check(req.timeout(Duration::from_secs(60)).send()?)?;
        Ok(())
    }

    /// GETs with retries on transport failure; HTTP error statuses are not
    /// retried.
    pub(crate) fn get<T: DeserializeOwned>(&self, url: Url) -> Result<T> {
        let mut attempt = 0;
        loop {
            match self.request(Method::GET, url.clone()).timeout(Duration::from_secs(60)).send() {
                Ok(resp) => return Ok(Self::check(resp)?.json()?),
                Err(e) if attempt < GET_RETRIES && !e.is_builder() => {
                    attempt += 1;
                    thread::sleep(Duration::from_millis(100 << attempt));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn models(&self) -> Result<Vec<ModelSummary>> {
        self.get(self.url(&["models"]))
    }

    pub fn model(&self, id: &str) -> Result<Model<'_>> {
        let record = self.get(self.url(&["models", id]))?;
        Ok(Model { session: self, record })
    }

    /// Resolves a model by its exact name.
    pub fn get_model_with_name(&self, name: &str) -> Result<Model<'_>> {
        let mut url = self.url(&["models"]);
        url.query_pairs_mut().append_pair("name", name);
        let found: Vec<ModelSummary> = self.get(url)?;
        let summary = found
            .into_iter()
            .find(|m| m.name == name)
            .ok_or_else(|| ClientError::NotFound(format!("no model named {name:?}")))?;
        self.model(&summary.id)
    }

    /// Uploads a model file. `kernel_tag` defaults on the server side from
    /// the file extension.
    pub fn new_model(&self, path: impl AsRef<Path>, name: &str, kernel_tag: Option<&str>) -> Result<Model<'_>> {
        let path = path.as_ref();
        let bytes = read(path)?;
        self.new_model_from_bytes(&file_name(path), bytes, name, kernel_tag)
    }

    pub fn new_model_from_bytes(
        &self,
        filename: &str,
        source: Vec<u8>,
        name: &str,
        kernel_tag: Option<&str>,
    ) -> Result<Model<'_>> {
        let mut form = multipart::Form::new()
            .text("name", name.to_string())
            .part("file", multipart::Part::bytes(source).file_name(filename.to_string()));
        if let Some(tag) = kernel_tag {
            form = form.text("kernel_tag", tag.to_string());
        }
        let record = self.send(self.request(Method::POST, self.url(&["models"])).multipart(form))?;
        Ok(Model { session: self, record })
    }

    pub fn execution(&self, id: &str) -> Result<ExecutionRecord> {
        self.get(self.url(&["executions", id]))
    }

    pub fn execution_log(&self, id: &str) -> Result<Vec<String>> {
        let page: LogPage = self.get(self.url(&["executions", id, "log"]))?;
        Ok(page.lines)
    }

    pub fn execution_results(&self, id: &str) -> Result<ResultsReport> {
        self.get(self.url(&["executions", id, "results"]))
    }

    /// Polls an execution until it is terminal or the session timeout
    /// passes.
    pub fn wait_for(&self, execution_id: &str) -> Result<ExecutionRecord> {
        let start = Instant::now();
        loop {
            let e = self.execution(execution_id)?;
            if e.status.is_terminal() {
                return Ok(e);
            }
            let waited = start.elapsed();
            if waited >= self.timeout {
                return Err(ClientError::Timeout { execution_id: execution_id.to_string(), waited });
            }
            thread::sleep(self.poll_interval.min(self.timeout - waited));
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| ClientError::Io { path: path.display().to_string(), source })
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "upload".into())
}

/// A model on the server plus its last fetched record.
#[derive(Debug, Clone)]
pub struct Model<'a> {
    session: &'a Interface,
    record: ModelRecord,
}

fn render_entries(out: &mut String, entries: &[RecipeEntry]) {
    if entries.is_empty() {
        out.push_str("  (none)\n");
    }
    for e in entries {
        let _ = writeln!(out, "  {:<16}  {:<24}  {}", e.kind.keyword(), e.name, e.description.as_deref().unwrap_or(""));
    }
}

/// Text form of a recipe: inputs, outputs, then the solve chain.
pub fn render_recipe(recipe: &Recipe) -> String {
    let mut out = String::from("inputs:\n");
    render_entries(&mut out, &recipe.inputs);
    out.push_str("outputs:\n");
    render_entries(&mut out, &recipe.outputs);
    let chain = if recipe.solve_chain.is_empty() { "(none)".to_string() } else { recipe.solve_chain.join(" -> ") };
    let _ = writeln!(out, "solve chain: {chain}");
    out
}

/// One component per line: kind, name, description.
pub fn render_components(rows: &[ComponentRow]) -> String {
    rows.iter()
        .map(|r| {
            format!("{:<16}  {:<24}  {}", r.kind.keyword(), r.name, r.description.as_deref().unwrap_or(""))
                .trim_end()
                .to_string()
                + "\n"
        })
        .collect()
}

impl<'a> Model<'a> {
    pub fn id(&self) -> &str {
        &self.record.id
    }

    pub fn name(&self) -> &str {
        &self.record.name
    }

    pub fn record(&self) -> &ModelRecord {
        &self.record
    }

    pub fn refresh(&mut self) -> Result<()> {
        self.record = self.session.get(self.session.url(&["models", &self.record.id]))?;
        Ok(())
    }

    pub fn set_interface_object(&mut self, name: &str, value: impl Into<Value>) -> Result<()> {
        let url = self.session.url(&["models", &self.record.id, "interface", "objects", name]);
        let body = SetObject { value: value.into() };
        self.record = self.session.send(self.session.request(Method::PUT, url).json(&body))?;
        Ok(())
    }

    pub fn set_interface_file(&mut self, name: &str, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.set_interface_file_bytes(name, &file_name(path), read(path)?)
    }

    pub fn set_interface_file_bytes(&mut self, name: &str, filename: &str, bytes: Vec<u8>) -> Result<()> {
        let url = self.session.url(&["models", &self.record.id, "interface", "files", name]);
        let form = multipart::Form::new().part("file", multipart::Part::bytes(bytes).file_name(filename.to_string()));
        self.record = self.session.send(self.session.request(Method::PUT, url).multipart(form))?;
        Ok(())
    }

    pub fn recipe(&self) -> Result<Recipe> {
        self.session.get(self.session.url(&["models", &self.record.id, "recipe"]))
    }

    pub fn show_recipe(&self) -> Result<String> {
        Ok(render_recipe(&self.recipe()?))
    }

    pub fn components(&self) -> Result<Vec<ComponentRow>> {
        self.session.get(self.session.url(&["models", &self.record.id, "components"]))
    }

    pub fn show_components(&self) -> Result<String> {
        Ok(render_components(&self.components()?))
    }

    /// Runs the model and waits for a terminal status.
    pub fn run(&self) -> Result<ExecutionRecord> {
        self.run_with(true)
    }

    /// Starts a run; with `wait` the call returns only once the execution
    /// is terminal.
    pub fn run_with(&self, wait: bool) -> Result<ExecutionRecord> {
        let url = self.session.url(&["models", &self.record.id, "run"]);
        let started: ExecutionRecord = self.session.send(self.session.request(Method::POST, url))?;
        if wait {
            self.session.wait_for(&started.id)
        } else {
            Ok(started)
        }
    }

    pub fn status_report(&self) -> Result<StatusReport> {
        self.session.get(self.session.url(&["models", &self.record.id, "status"]))
    }

    /// Status of the most recent execution, or `created` if never run.
    pub fn get_status(&self) -> Result<ExecutionStatus> {
        Ok(self.status_report()?.status)
    }

    fn latest_execution(&self) -> Result<String> {
        self.status_report()?
            .execution_id
            .ok_or_else(|| ClientError::NotFound(format!("model {:?} has not been run", self.record.name)))
    }

    /// Log of the most recent execution, one line per entry.
    pub fn get_execution_log(&self) -> Result<String> {
        let lines = self.session.execution_log(&self.latest_execution()?)?;
        Ok(lines.iter().map(|l| format!("{l}\n")).collect())
    }

    /// Results of the most recent execution.
    pub fn results(&self) -> Result<BTreeMap<String, Value>> {
        Ok(self.session.execution_results(&self.latest_execution()?)?.results)
    }

    /// Value of one component in the latest results.
    pub fn get_output(&self, component: &str) -> Result<Value> {
        if self.record.manifest.component(component).is_none() {
            return Err(ClientError::NotFound(format!("model has no component named {component:?}")));
        }
        self.results()?
            .remove(component)
            .ok_or_else(|| ClientError::NotFound(format!("no result for component {component:?}")))
    }

    pub fn delete(self) -> Result<()> {
        let url = self.session.url(&["models", &self.record.id]);
        self.session.send_empty(self.session.request(Method::DELETE, url))
    }
}

pub(crate) fn is_no_content(resp: &Response) -> bool {
    resp.status() == StatusCode::NO_CONTENT
}

#[cfg(test)]
mod tests {
    use super::*;
    use modelhub_core::ComponentKind;

    #[test]
    fn base_url_rules() {
        assert!(Interface::new("http://localhost:8000", "t").is_ok());
        assert!(Interface::new("http://localhost:8000/", "t").is_ok());
        assert!(Interface::new("http://localhost:8000/api", "t").is_err());
        assert!(Interface::new("ftp://localhost", "t").is_err());
        assert!(Interface::new("not a url", "t").is_err());
    }

    #[test]
    fn names_are_percent_encoded() {
        let i = Interface::new("http://h:1", "t").unwrap();
        assert_eq!(i.url(&["models", "a/b c"]).as_str(), "http://h:1/api/models/a%2Fb%20c/");
        let mut u = i.url(&["models"]);
        u.query_pairs_mut().append_pair("name", "A+B Model");
        assert_eq!(u.as_str(), "http://h:1/api/models/?name=A%2BB+Model");
    }

    #[test]
    fn rendering() {
        let rows = vec![
            ComponentRow {
                kind: ComponentKind::Constraint,
                name: "P_limits".into(),
                description: Some("Generator active power limits".into()),
                order: 0,
            },
            ComponentRow { kind: ComponentKind::Problem, name: "problem".into(), description: None, order: 1 },
        ];
        let text = render_components(&rows);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("Constraint") && lines[0].ends_with("Generator active power limits"));
        assert!(lines[1].contains("problem"));

        let recipe = Recipe { inputs: vec![], outputs: vec![], solve_chain: vec!["problem".into(), "info".into()] };
        assert!(render_recipe(&recipe).contains("solve chain: problem -> info"));
    }
}
