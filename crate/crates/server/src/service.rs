//! The backend operations, independent of HTTP routing.
//!
//! Every state change happens inside one store transaction, and execution
//! status changes are compare-and-set on the current status, so concurrent
//! requests and workers cannot skip or repeat a lifecycle step.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use chrono::{SecondsFormat, TimeZone, Utc};
use modelhub_core::kernel::NATIVE_KERNEL_TAG;
use modelhub_core::lp::script::{parse_script, InputValue};
use modelhub_core::model::has_errors;
use modelhub_core::wire::{
    AttachedFile, ExecutionRecord, ExecutionStatus, FileRef, InterfaceValue, JobPayload, LogPage, ModelRecord,
    ModelSummary, ResultPost, ResultsReport, StatusReport, WorkerRecord,
};
use modelhub_core::{
    build_recipe, component_listing, detect_comment_tag, parse, validate, ComponentKind, ComponentRow, Diagnostic,
    ModelManifest, ParserConfig, Recipe,
};
use rusqlite::{params, Row, Transaction};
use serde_json::{json, Value};
use tokio::sync::Notify;
use tokio::time::Instant;

use crate::auth::{self, Principal};
use crate::error::{ApiError, ApiResult};
use crate::store::{optional, Store};

/// A job is requeued after its first worker is lost, and errored after the
/// second.
pub const MAX_ATTEMPTS: u32 = 2;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Workers silent for longer than this are considered gone.
    pub worker_timeout: Duration,
    pub max_upload_bytes: usize,
    pub max_long_poll: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            worker_timeout: Duration::from_secs(90),
            max_upload_bytes: 16 * 1024 * 1024,
            max_long_poll: Duration::from_secs(30),
        }
    }
}

/// A model upload as received from a client.
#[derive(Debug, Clone, Default)]
pub struct NewModel {
    pub name: String,
    pub filename: Option<String>,
    pub source: Vec<u8>,
    pub kernel_tag: Option<String>,
    pub comment_tag: Option<String>,
}

pub struct Service {
    store: Store,
    config: ServiceConfig,
    job_ready: Notify,
}

fn now_ms() -> i64 {
    Utc::now().timestamp_millis()
}

fn stamp(ms: i64) -> String {
    Utc.timestamp_millis_opt(ms).single().unwrap_or_default().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn now() -> String {
    stamp(now_ms())
}

/// Kernel used when the uploader does not name one.
pub fn default_kernel_tag(filename: Option<&str>) -> &'static str {
    match filename.and_then(|f| Path::new(f).extension()).and_then(|e| e.to_str()) {
        Some("mhl") => NATIVE_KERNEL_TAG,
        _ => "script",
    }
}

struct ModelRow {
    id: String,
    owner: String,
    name: String,
    kernel_tag: String,
    source: String,
    manifest: ModelManifest,
    diagnostics: Vec<Diagnostic>,
    created_at: String,
}

const MODEL_COLUMNS: &str = "id, owner, name, kernel_tag, source, manifest, diagnostics, created_at";

type ModelColumns = (String, String, String, String, String, String, String, String);

fn model_row(r: &Row<'_>) -> rusqlite::Result<ModelColumns> {
    Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?, r.get(5)?, r.get(6)?, r.get(7)?))
}

fn load_model(tx: &Transaction<'_>, id: &str) -> ApiResult<Option<ModelRow>> {
    let sql = format!("SELECT {MODEL_COLUMNS} FROM models WHERE id = ?1");
    let Some((id, owner, name, kernel_tag, source, manifest, diagnostics, created_at)) =
        optional(tx.query_row(&sql, [id], model_row))?
    else {
        return Ok(None);
    };
    Ok(Some(ModelRow {
        id,
        owner,
        name,
        kernel_tag,
        source,
        manifest: serde_json::from_str(&manifest)?,
        diagnostics: serde_json::from_str(&diagnostics)?,
        created_at,
    }))
}

/// Models are visible to their owner only; others get the same 404 as for a
/// missing id.
fn owned_model(tx: &Transaction<'_>, p: &Principal, id: &str) -> ApiResult<ModelRow> {
    match load_model(tx, id)? {
        Some(m) if m.owner == p.user => Ok(m),
        _ => Err(ApiError::not_found(format!("no model with id {id}"))),
    }
}

fn interface_values(tx: &Transaction<'_>, model_id: &str) -> ApiResult<BTreeMap<String, InterfaceValue>> {
    let mut stmt = tx.prepare("SELECT name, value FROM interface_values WHERE model_id = ?1")?;
    let rows = stmt.query_map([model_id], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)))?;
    let mut out = BTreeMap::new();
    for row in rows {
        let (name, value) = row?;
        out.insert(name, serde_json::from_str(&value)?);
    }
    Ok(out)
}

fn put_interface_value(tx: &Transaction<'_>, model_id: &str, name: &str, value: &InterfaceValue) -> ApiResult<()> {
    tx.execute(
        "INSERT INTO interface_values (model_id, name, value) VALUES (?1, ?2, ?3)
         ON CONFLICT (model_id, name) DO UPDATE SET value = excluded.value",
        params![model_id, name, serde_json::to_string(value)?],
    )?;
    Ok(())
}

fn model_record(tx: &Transaction<'_>, m: ModelRow) -> ApiResult<ModelRecord> {
    let interface_values = interface_values(tx, &m.id)?;
    Ok(ModelRecord {
        id: m.id,
        name: m.name,
        owner: m.owner,
        kernel_tag: m.kernel_tag,
        created_at: m.created_at,
        manifest: m.manifest,
        source: m.source,
        interface_values,
        diagnostics: m.diagnostics,
    })
}

const EXECUTION_COLUMNS: &str =
    "e.id, e.model_id, e.status, e.snapshot, e.results, e.created_at, e.started_at, e.ended_at, e.worker_id, e.attempts";

fn execution_row(r: &Row<'_>) -> rusqlite::Result<ExecutionRow> {
    Ok(ExecutionRow {
        id: r.get(0)?,
        model_id: r.get(1)?,
        status: r.get(2)?,
        snapshot: r.get(3)?,
        results: r.get(4)?,
        created_at: r.get(5)?,
        started_at: r.get(6)?,
        ended_at: r.get(7)?,
        worker_id: r.get(8)?,
        attempts: r.get(9)?,
    })
}

struct ExecutionRow {
    id: String,
    model_id: String,
    status: String,
    snapshot: String,
    results: String,
    created_at: String,
    started_at: Option<String>,
    ended_at: Option<String>,
    worker_id: Option<String>,
    attempts: u32,
}

impl ExecutionRow {
    fn into_record(self) -> ApiResult<ExecutionRecord> {
        Ok(ExecutionRecord {
            status: self.status.parse().map_err(|e| ApiError::internal(format!("{e}")))?,
            input_snapshot: serde_json::from_str(&self.snapshot)?,
            results: serde_json::from_str(&self.results)?,
            id: self.id,
            model_id: self.model_id,
            created_at: self.created_at,
            started_at: self.started_at,
            ended_at: self.ended_at,
            worker_id: self.worker_id,
            attempts: self.attempts,
        })
    }
}

fn load_execution(tx: &Transaction<'_>, id: &str) -> ApiResult<Option<ExecutionRecord>> {
    let sql = format!("SELECT {EXECUTION_COLUMNS} FROM executions e WHERE e.id = ?1");
    optional(tx.query_row(&sql, [id], execution_row))?.map(ExecutionRow::into_record).transpose()
}

fn owned_execution(tx: &Transaction<'_>, p: &Principal, id: &str) -> ApiResult<ExecutionRecord> {
    let sql = format!(
        "SELECT {EXECUTION_COLUMNS} FROM executions e JOIN models m ON m.id = e.model_id
         WHERE e.id = ?1 AND m.owner = ?2"
    );
    optional(tx.query_row(&sql, params![id, p.user], execution_row))?
        .ok_or_else(|| ApiError::not_found(format!("no execution with id {id}")))?
        .into_record()
}

fn append_log(tx: &Transaction<'_>, execution_id: &str, lines: &[String]) -> ApiResult<()> {
    let next: i64 = tx.query_row(
        "SELECT COALESCE(MAX(seq) + 1, 0) FROM execution_logs WHERE execution_id = ?1",
        [execution_id],
        |r| r.get(0),
    )?;
    let mut stmt = tx.prepare("INSERT INTO execution_logs (execution_id, seq, line) VALUES (?1, ?2, ?3)")?;
    for (i, line) in lines.iter().enumerate() {
        stmt.execute(params![execution_id, next + i as i64, line])?;
    }
    Ok(())
}

/// Moves an execution from `from` to `to`; returns false if it was not in
/// `from`.
fn transition(tx: &Transaction<'_>, id: &str, from: ExecutionStatus, to: ExecutionStatus) -> ApiResult<bool> {
    let n = tx.execute(
        "UPDATE executions SET status = ?1 WHERE id = ?2 AND status = ?3",
        params![to.as_str(), id, from.as_str()],
    )?;
    Ok(n == 1)
}

struct WorkerRow {
    id: String,
    owner: String,
    kernel_tags: Vec<String>,
    last_heartbeat: i64,
    active_job: Option<String>,
}

impl WorkerRow {
    fn record(&self) -> WorkerRecord {
        WorkerRecord {
            id: self.id.clone(),
            kernel_tags: self.kernel_tags.clone(),
            last_heartbeat: stamp(self.last_heartbeat),
            active_job: self.active_job.clone(),
        }
    }
}

fn load_worker(tx: &Transaction<'_>, p: &Principal, id: &str) -> ApiResult<WorkerRow> {
    let row = optional(tx.query_row(
        "SELECT id, owner, kernel_tags, last_heartbeat, active_job FROM workers WHERE id = ?1",
        [id],
        |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, String>(2)?, r.get(3)?, r.get(4)?)),
    ))?;
    match row {
        Some((id, owner, tags, last_heartbeat, active_job)) if owner == p.user => Ok(WorkerRow {
            id,
            owner,
            kernel_tags: serde_json::from_str(&tags)?,
            last_heartbeat,
            active_job,
        }),
        _ => Err(ApiError::not_found(format!("no worker with id {id}"))),
    }
}

fn touch_worker(tx: &Transaction<'_>, w: &mut WorkerRow) -> ApiResult<()> {
    w.last_heartbeat = now_ms();
    tx.execute("UPDATE workers SET last_heartbeat = ?1 WHERE id = ?2", params![w.last_heartbeat, w.id])?;
    Ok(())
}

fn check_object_value(value: &Value) -> ApiResult<()> {
    let ok = match value {
        Value::Number(_) | Value::String(_) => true,
        Value::Array(items) => items.iter().all(Value::is_number),
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(ApiError::unprocessable("interface object values must be a number, a list of numbers or a string"))
    }
}

fn input_json(v: InputValue) -> Value {
    match v {
        InputValue::Scalar(x) => json!(x),
        InputValue::Vector(v) => json!(v),
        InputValue::Text(t) => json!(t),
    }
}

impl Service {
    pub fn open(data_dir: &Path, config: ServiceConfig) -> ApiResult<Self> {
        Ok(Service { store: Store::open(data_dir)?, config, job_ready: Notify::new() })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn authenticate(&self, token: &str) -> ApiResult<Principal> {
        auth::authenticate(&self.store, token)
    }

    pub fn create_token(&self, user: &str, worker: bool) -> ApiResult<String> {
        auth::create_token(&self.store, user, worker)
    }

    pub fn create_model(&self, p: &Principal, upload: NewModel) -> ApiResult<ModelRecord> {
        let name = upload.name.trim().to_string();
        if name.is_empty() {
            return Err(ApiError::unprocessable("model name must not be empty"));
        }
        if upload.source.len() > self.config.max_upload_bytes {
            return Err(ApiError::too_large(format!(
                "model file exceeds the {} byte upload limit",
                self.config.max_upload_bytes
            )));
        }
        let source =
            String::from_utf8(upload.source).map_err(|_| ApiError::unprocessable("model file is not valid UTF-8"))?;
        let tag = match (&upload.comment_tag, &upload.filename) {
            (Some(t), _) => t.clone(),
            (None, Some(f)) => detect_comment_tag(f).map(str::to_string).map_err(|e| {
                ApiError::unprocessable(format!("{e}; supply comment_tag explicitly"))
            })?,
            (None, None) => return Err(ApiError::unprocessable("no filename or comment_tag given")),
        };
        let config = ParserConfig::new(&tag).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        let kernel_tag = upload
            .kernel_tag
            .filter(|k| !k.trim().is_empty())
            .unwrap_or_else(|| default_kernel_tag(upload.filename.as_deref()).to_string());

        let (mut manifest, mut diagnostics) = parse(&source, &config);
        if manifest.name.is_empty() {
            manifest.name = name.clone();
        }
        diagnostics.extend(validate(&manifest));
        if has_errors(&diagnostics) {
            let detail = serde_json::to_value(&diagnostics)?;
            return Err(ApiError::unprocessable("model has error diagnostics").with_detail(detail));
        }

        let mut defaults = BTreeMap::new();
        if kernel_tag == NATIVE_KERNEL_TAG {
            match parse_script(&manifest, &source) {
                Ok(script) => {
                    diagnostics.extend(script.warnings().iter().map(|w| Diagnostic::warning(w.clone())));
                    defaults = script.defaults();
                }
                Err(e) => diagnostics.push(Diagnostic::warning(format!("{NATIVE_KERNEL_TAG}: {e}"))),
            }
        }

        let id = uuid::Uuid::new_v4().simple().to_string();
        self.store.write(|tx| {
            let taken: bool = tx.query_row(
                "SELECT EXISTS (SELECT 1 FROM models WHERE owner = ?1 AND name = ?2)",
                params![p.user, name],
                |r| r.get(0),
            )?;
            if taken {
                return Err(ApiError::conflict(format!("a model named {name:?} already exists")));
            }
            tx.execute(
                &format!("INSERT INTO models ({MODEL_COLUMNS}) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)"),
                params![
                    id,
                    p.user,
                    name,
                    kernel_tag,
                    source,
                    serde_json::to_string(&manifest)?,
                    serde_json::to_string(&diagnostics)?,
                    now(),
                ],
            )?;
            for (input, value) in defaults {
                put_interface_value(tx, &id, &input, &InterfaceValue::Value(input_json(value)))?;
            }
            let m = load_model(tx, &id)?.expect("row was just inserted");
            model_record(tx, m)
        })
    }

    /// Summaries of the caller's models, newest first.
    pub fn list_models(&self, p: &Principal, name: Option<&str>) -> ApiResult<Vec<ModelSummary>> {
        self.store.read(|tx| {
            let mut stmt = tx.prepare(
                "SELECT m.id, m.name, m.kernel_tag, m.created_at, m.manifest,
                        (SELECT e.status FROM executions e WHERE e.model_id = m.id ORDER BY e.seq DESC LIMIT 1)
                 FROM models m WHERE m.owner = ?1 AND (?2 IS NULL OR m.name = ?2)
                 ORDER BY m.seq DESC",
            )?;
            let rows = stmt.query_map(params![p.user, name], |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, String>(2)?,
                    r.get::<_, String>(3)?,
                    r.get::<_, String>(4)?,
                    r.get::<_, Option<String>>(5)?,
                ))
            })?;
            let mut out = Vec::new();
            for row in rows {
                let (id, name, kernel_tag, created_at, manifest, status) = row?;
                let manifest: ModelManifest = serde_json::from_str(&manifest)?;
                let latest_status = match status {
                    Some(s) => s.parse().map_err(|e| ApiError::internal(format!("{e}")))?,
                    None => ExecutionStatus::Created,
                };
                out.push(ModelSummary {
                    id,
                    name,
                    kernel_tag,
                    created_at,
                    components: manifest.components.len(),
                    latest_status,
                });
            }
            Ok(out)
        })
    }

    pub fn get_model(&self, p: &Principal, id: &str) -> ApiResult<ModelRecord> {
        self.store.read(|tx| {
            let m = owned_model(tx, p, id)?;
            model_record(tx, m)
        })
    }

    pub fn delete_model(&self, p: &Principal, id: &str) -> ApiResult<()> {
        self.store.write(|tx| {
            owned_model(tx, p, id)?;
            tx.execute(
                "UPDATE workers SET active_job = NULL
                 WHERE active_job IN (SELECT id FROM executions WHERE model_id = ?1)",
                [id],
            )?;
            tx.execute("DELETE FROM models WHERE id = ?1", [id])?;
            Ok(())
        })
    }

    pub fn components(&self, p: &Principal, id: &str) -> ApiResult<Vec<ComponentRow>> {
        self.store.read(|tx| Ok(component_listing(&owned_model(tx, p, id)?.manifest)))
    }

    pub fn recipe(&self, p: &Principal, id: &str) -> ApiResult<Recipe> {
        let manifest = self.store.read(|tx| Ok(owned_model(tx, p, id)?.manifest))?;
        build_recipe(&manifest).map_err(|e| ApiError::unprocessable(e.to_string()))
    }

    fn interface_component(m: &ModelRow, name: &str, kind: ComponentKind) -> ApiResult<()> {
        let c = m
            .manifest
            .component(name)
            .ok_or_else(|| ApiError::not_found(format!("model has no component named {name:?}")))?;
        if c.kind != kind {
            return Err(ApiError::unprocessable(format!(
                "component {name:?} is a {}, not an {}",
                c.kind.keyword(),
                kind.keyword()
            )));
        }
        Ok(())
    }

    pub fn set_interface_object(&self, p: &Principal, id: &str, name: &str, value: Value) -> ApiResult<ModelRecord> {
        self.store.write(|tx| {
            let m = owned_model(tx, p, id)?;
            Self::interface_component(&m, name, ComponentKind::InterfaceObject)?;
            check_object_value(&value)?;
            put_interface_value(tx, id, name, &InterfaceValue::Value(value))?;
            model_record(tx, m)
        })
    }

    pub fn set_interface_file(
        &self,
        p: &Principal,
        id: &str,
        name: &str,
        filename: &str,
        bytes: &[u8],
    ) -> ApiResult<ModelRecord> {
        if bytes.len() > self.config.max_upload_bytes {
            return Err(ApiError::too_large(format!(
                "file exceeds the {} byte upload limit",
                self.config.max_upload_bytes
            )));
        }
        self.store.read(|tx| {
            let m = owned_model(tx, p, id)?;
            Self::interface_component(&m, name, ComponentKind::InterfaceFile)
        })?;
        // Blobs are immutable and content addressed, so writing one before
        // the transaction is harmless if the transaction then fails.
        let digest = self.store.put_blob(bytes)?;
        let file = FileRef { filename: filename.to_string(), digest, size: bytes.len() as u64 };
        self.store.write(|tx| {
            let m = owned_model(tx, p, id)?;
            Self::interface_component(&m, name, ComponentKind::InterfaceFile)?;
            put_interface_value(tx, id, name, &InterfaceValue::File(file))?;
            model_record(tx, m)
        })
    }

    fn live_worker_for(&self, tx: &Transaction<'_>, kernel_tag: &str) -> ApiResult<bool> {
        let cutoff = now_ms() - self.config.worker_timeout.as_millis() as i64;
        let mut stmt = tx.prepare("SELECT kernel_tags FROM workers WHERE last_heartbeat >= ?1")?;
        let rows = stmt.query_map([cutoff], |r| r.get::<_, String>(0))?;
        for tags in rows {
            let tags: Vec<String> = serde_json::from_str(&tags?)?;
            if tags.iter().any(|t| t == kernel_tag) {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Freezes the current inputs into a new execution and queues it.
    pub fn run(&self, p: &Principal, id: &str) -> ApiResult<ExecutionRecord> {
        let outcome = self.store.write(|tx| {
            let m = owned_model(tx, p, id)?;
            let recipe = build_recipe(&m.manifest).map_err(|e| ApiError::unprocessable(e.to_string()))?;
            let values = interface_values(tx, id)?;
            let missing: Vec<&str> =
                recipe.inputs.iter().map(|e| e.name.as_str()).filter(|n| !values.contains_key(*n)).collect();
            if !missing.is_empty() {
                return Err(ApiError::conflict(format!("missing required inputs: {}", missing.join(", ")))
                    .with_detail(json!({ "missing": missing })));
            }

            let exec_id = uuid::Uuid::new_v4().simple().to_string();
            tx.execute(
                "INSERT INTO executions (id, model_id, kernel_tag, status, snapshot, results, created_at)
                 VALUES (?1, ?2, ?3, ?4, ?5, '{}', ?6)",
                params![
                    exec_id,
                    id,
                    m.kernel_tag,
                    ExecutionStatus::Created.as_str(),
                    serde_json::to_string(&values)?,
                    now()
                ],
            )?;
            if !self.live_worker_for(tx, &m.kernel_tag)? {
                let line = format!("no worker with kernel tag {:?} is registered", m.kernel_tag);
                append_log(tx, &exec_id, &[line])?;
                transition(tx, &exec_id, ExecutionStatus::Created, ExecutionStatus::Error)?;
                tx.execute("UPDATE executions SET ended_at = ?1 WHERE id = ?2", params![now(), exec_id])?;
                return Ok(Err((exec_id, m.kernel_tag)));
            }
            transition(tx, &exec_id, ExecutionStatus::Created, ExecutionStatus::Queued)?;
            append_log(tx, &exec_id, &[format!("queued for kernel {}", m.kernel_tag)])?;
            Ok(Ok(load_execution(tx, &exec_id)?.expect("row was just inserted")))
        })?;
        match outcome {
            Ok(record) => {
                self.job_ready.notify_waiters();
                Ok(record)
            }
            Err((exec_id, tag)) => Err(ApiError::unavailable(format!("no worker with kernel tag {tag:?} is registered"))
                .with_detail(json!({ "execution_id": exec_id }))),
        }
    }

    pub fn status(&self, p: &Principal, id: &str) -> ApiResult<StatusReport> {
        self.store.read(|tx| {
            owned_model(tx, p, id)?;
            let latest = optional(tx.query_row(
                "SELECT id, status FROM executions WHERE model_id = ?1 ORDER BY seq DESC LIMIT 1",
                [id],
                |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)),
            ))?;
            Ok(match latest {
                Some((exec_id, status)) => StatusReport {
                    status: status.parse().map_err(|e| ApiError::internal(format!("{e}")))?,
                    execution_id: Some(exec_id),
                },
                None => StatusReport { status: ExecutionStatus::Created, execution_id: None },
            })
        })
    }

    pub fn get_execution(&self, p: &Principal, id: &str) -> ApiResult<ExecutionRecord> {
        self.store.read(|tx| owned_execution(tx, p, id))
    }

    pub fn log(&self, p: &Principal, id: &str, offset: usize) -> ApiResult<LogPage> {
        self.store.read(|tx| {
            owned_execution(tx, p, id)?;
            let mut stmt =
                tx.prepare("SELECT line FROM execution_logs WHERE execution_id = ?1 AND seq >= ?2 ORDER BY seq")?;
            let lines = stmt.query_map(params![id, offset as i64], |r| r.get(0))?.collect::<Result<_, _>>()?;
            Ok(LogPage { execution_id: id.to_string(), offset, lines })
        })
    }

    pub fn results(&self, p: &Principal, id: &str) -> ApiResult<ResultsReport> {
        let e = self.get_execution(p, id)?;
        if !e.status.is_terminal() {
            return Err(ApiError::conflict(format!("execution {id} is still {}", e.status)));
        }
        Ok(ResultsReport { execution_id: e.id, status: e.status, results: e.results })
    }

    pub fn register_worker(&self, p: &Principal, kernel_tags: Vec<String>) -> ApiResult<WorkerRecord> {
        self.register(p, kernel_tags, false)
    }

    pub(crate) fn register(&self, p: &Principal, kernel_tags: Vec<String>, embedded: bool) -> ApiResult<WorkerRecord> {
        p.require_worker()?;
        if kernel_tags.is_empty() || kernel_tags.iter().any(|t| t.trim().is_empty()) {
            return Err(ApiError::unprocessable("kernel_tags must be a non-empty list of non-empty tags"));
        }
        let w = WorkerRow {
            id: uuid::Uuid::new_v4().simple().to_string(),
            owner: p.user.clone(),
            kernel_tags,
            last_heartbeat: now_ms(),
            active_job: None,
        };
        self.store.write(|tx| {
            tx.execute(
                "INSERT INTO workers (id, owner, kernel_tags, last_heartbeat, embedded) VALUES (?1, ?2, ?3, ?4, ?5)",
                params![w.id, w.owner, serde_json::to_string(&w.kernel_tags)?, w.last_heartbeat, embedded],
            )?;
            Ok(())
        })?;
        Ok(w.record())
    }

    pub fn heartbeat(&self, p: &Principal, worker_id: &str) -> ApiResult<WorkerRecord> {
        p.require_worker()?;
        self.store.write(|tx| {
            let mut w = load_worker(tx, p, worker_id)?;
            touch_worker(tx, &mut w)?;
            Ok(w.record())
        })
    }

    /// Waits up to `wait` for a queued job matching the worker's tags.
    ///
    /// The wait is capped below the worker timeout so a worker that is
    /// long-polling never looks stale.
    pub async fn next_job(&self, p: &Principal, worker_id: &str, wait: Duration) -> ApiResult<Option<JobPayload>> {
        p.require_worker()?;
        let wait = wait.min(self.config.max_long_poll).min(self.config.worker_timeout / 2);
        let deadline = Instant::now() + wait;
        loop {
            let notified = self.job_ready.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            if let Some(job) = self.try_assign(p, worker_id)? {
                return Ok(Some(job));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            let _ = tokio::time::timeout(deadline - now, notified).await;
        }
    }

    fn try_assign(&self, p: &Principal, worker_id: &str) -> ApiResult<Option<JobPayload>> {
        let assigned = self.store.write(|tx| {
            let mut w = load_worker(tx, p, worker_id)?;
            touch_worker(tx, &mut w)?;
            if let Some(job) = &w.active_job {
                let still_running = load_execution(tx, job)?.is_some_and(|e| e.status == ExecutionStatus::Running);
                if still_running {
                    return Err(ApiError::conflict(format!("worker {worker_id} already holds job {job}"))
                        .with_detail(json!({ "execution_id": job })));
                }
                tx.execute("UPDATE workers SET active_job = NULL WHERE id = ?1", [worker_id])?;
            }

            let mut stmt = tx.prepare(
                "SELECT e.id, e.kernel_tag FROM executions e WHERE e.status = 'queued' ORDER BY e.seq",
            )?;
            let queued: Vec<(String, String)> =
                stmt.query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?.collect::<Result<_, _>>()?;
            let Some((exec_id, _)) = queued.into_iter().find(|(_, tag)| w.kernel_tags.contains(tag)) else {
                return Ok(None);
            };
            if !transition(tx, &exec_id, ExecutionStatus::Queued, ExecutionStatus::Running)? {
                return Ok(None);
            }
            tx.execute(
                "UPDATE executions SET worker_id = ?1, started_at = ?2, attempts = attempts + 1 WHERE id = ?3",
                params![worker_id, now(), exec_id],
            )?;
            tx.execute("UPDATE workers SET active_job = ?1 WHERE id = ?2", params![exec_id, worker_id])?;
            let e = load_execution(tx, &exec_id)?.expect("execution exists");
            append_log(tx, &exec_id, &[format!("assigned to worker {worker_id} (attempt {})", e.attempts)])?;
            let m = load_model(tx, &e.model_id)?.expect("executions belong to models");
            Ok(Some((e, m)))
        })?;
        let Some((e, m)) = assigned else {
            return Ok(None);
        };

        let mut inputs = BTreeMap::new();
        let mut attached_files = Vec::new();
        for (name, value) in e.input_snapshot {
            match value {
                InterfaceValue::Value(v) => {
                    inputs.insert(name, v);
                }
                InterfaceValue::File(f) => {
                    let content = self.store.get_blob(&f.digest)?;
                    attached_files.push(AttachedFile { name, filename: f.filename, content });
                }
            }
        }
        Ok(Some(JobPayload {
            execution_id: e.id,
            model_id: m.id,
            kernel_tag: m.kernel_tag,
            source: m.source,
            manifest: m.manifest,
            inputs,
            attached_files,
        }))
    }

    pub fn post_log(&self, p: &Principal, execution_id: &str, lines: &[String]) -> ApiResult<()> {
        p.require_worker()?;
        self.store.write(|tx| {
            let e = load_execution(tx, execution_id)?
                .ok_or_else(|| ApiError::not_found(format!("no execution with id {execution_id}")))?;
            if !matches!(e.status, ExecutionStatus::Queued | ExecutionStatus::Running) {
                return Err(ApiError::conflict(format!("execution {execution_id} is {}; its log is closed", e.status)));
            }
            append_log(tx, execution_id, lines)
        })
    }

    /// Records the single terminal transition of a running execution.
    pub fn post_result(&self, p: &Principal, execution_id: &str, post: ResultPost) -> ApiResult<ExecutionRecord> {
        p.require_worker()?;
        if !post.status.is_terminal() {
            return Err(ApiError::unprocessable("result status must be success or error"));
        }
        self.store.write(|tx| {
            let e = load_execution(tx, execution_id)?
                .ok_or_else(|| ApiError::not_found(format!("no execution with id {execution_id}")))?;
            if e.status != ExecutionStatus::Running {
                return Err(ApiError::conflict(format!("execution {execution_id} is {}, not running", e.status)));
            }
            if let Some(w) = &post.worker_id {
                if e.worker_id.as_deref() != Some(w.as_str()) {
                    return Err(ApiError::conflict(format!("execution {execution_id} is not assigned to worker {w}")));
                }
            }
            if !transition(tx, execution_id, ExecutionStatus::Running, post.status)? {
                return Err(ApiError::conflict(format!("execution {execution_id} is no longer running")));
            }
            let results = if post.status == ExecutionStatus::Success { post.results } else { BTreeMap::new() };
            tx.execute(
                "UPDATE executions SET results = ?1, ended_at = ?2 WHERE id = ?3",
                params![serde_json::to_string(&results)?, now(), execution_id],
            )?;
            tx.execute("UPDATE workers SET active_job = NULL WHERE active_job = ?1", [execution_id])?;
            Ok(load_execution(tx, execution_id)?.expect("execution exists"))
        })
    }

    /// Requeues or fails the job of a worker that is gone.
    fn release(tx: &Transaction<'_>, exec_id: &str, attempts: u32, reason: &str) -> ApiResult<bool> {
        tx.execute("UPDATE workers SET active_job = NULL WHERE active_job = ?1", [exec_id])?;
        if attempts < MAX_ATTEMPTS {
            transition(tx, exec_id, ExecutionStatus::Running, ExecutionStatus::Queued)?;
            tx.execute("UPDATE executions SET worker_id = NULL, started_at = NULL WHERE id = ?1", [exec_id])?;
            append_log(tx, exec_id, &[format!("{reason}; requeued")])?;
            Ok(true)
        } else {
            append_log(tx, exec_id, &[format!("{reason}; giving up after {attempts} attempts")])?;
            transition(tx, exec_id, ExecutionStatus::Running, ExecutionStatus::Error)?;
            tx.execute("UPDATE executions SET ended_at = ?1 WHERE id = ?2", params![now(), exec_id])?;
            Ok(false)
        }
    }

    /// Handles running jobs whose worker stopped sending heartbeats.
    /// Returns the number of jobs released.
    pub fn reap(&self) -> ApiResult<usize> {
        let cutoff = now_ms() - self.config.worker_timeout.as_millis() as i64;
        let (released, requeued) = self.store.write(|tx| {
            let mut stmt = tx.prepare(
                "SELECT e.id, e.worker_id, e.attempts FROM executions e LEFT JOIN workers w ON w.id = e.worker_id
                 WHERE e.status = 'running' AND (w.id IS NULL OR w.last_heartbeat < ?1)",
            )?;
            let lost: Vec<(String, Option<String>, u32)> =
                stmt.query_map([cutoff], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))?.collect::<Result<_, _>>()?;
            let mut requeued = false;
            for (id, worker, attempts) in &lost {
                let reason = format!("worker {} stopped responding", worker.as_deref().unwrap_or("?"));
                requeued |= Self::release(tx, id, *attempts, &reason)?;
            }
            Ok((lost.len(), requeued))
        })?;
        if requeued {
            self.job_ready.notify_waiters();
        }
        Ok(released)
    }

    /// Drops embedded workers left over from a previous process and
    /// releases the jobs they held.
    pub fn reclaim_embedded_workers(&self) -> ApiResult<usize> {
        self.store.write(|tx| {
            let mut stmt = tx.prepare(
                "SELECT e.id, e.attempts FROM executions e JOIN workers w ON w.id = e.worker_id
                 WHERE e.status = 'running' AND w.embedded = 1",
            )?;
            let held: Vec<(String, u32)> =
                stmt.query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?.collect::<Result<_, _>>()?;
            for (id, attempts) in &held {
                Self::release(tx, id, *attempts, "server restarted while the embedded worker held this job")?;
            }
            tx.execute("DELETE FROM workers WHERE embedded = 1", [])?;
            Ok(held.len())
        })
    }
}
