//! JSON documents exchanged over the REST API, shared by the server, the
//! client library and external workers.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::model::{Diagnostic, ModelManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionStatus {
    Created,
    Queued,
    Running,
    Success,
    Error,
}

impl ExecutionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecutionStatus::Created => "created",
            ExecutionStatus::Queued => "queued",
            ExecutionStatus::Running => "running",
            ExecutionStatus::Success => "success",
            ExecutionStatus::Error => "error",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, ExecutionStatus::Success | ExecutionStatus::Error)
    }

    /// Position in the lifecycle; both terminal states share the last rank.
    pub fn rank(self) -> u8 {
        match self {
            ExecutionStatus::Created => 0,
            ExecutionStatus::Queued => 1,
            ExecutionStatus::Running => 2,
            ExecutionStatus::Success | ExecutionStatus::Error => 3,
        }
    }
}

impl fmt::Display for ExecutionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown execution status {0:?}")]
pub struct UnknownStatus(pub String);

impl FromStr for ExecutionStatus {
    type Err = UnknownStatus;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "created" => ExecutionStatus::Created,
            "queued" => ExecutionStatus::Queued,
            "running" => ExecutionStatus::Running,
            "success" => ExecutionStatus::Success,
            "error" => ExecutionStatus::Error,
            other => return Err(UnknownStatus(other.to_string())),
        })
    }
}

/// A stored uploaded file, addressed by the SHA-256 of its bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub filename: String,
    pub digest: String,
    pub size: u64,
}

/// Current value of an interface component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterfaceValue {
    Value(Json),
    File(FileRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub id: String,
    pub name: String,
    pub kernel_tag: String,
    pub created_at: String,
    pub components: usize,
    pub latest_status: ExecutionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub id: String,
    pub name: String,
    pub owner: String,
    pub kernel_tag: String,
    pub created_at: String,
    pub manifest: ModelManifest,
    pub source: String,
    pub interface_values: BTreeMap<String, InterfaceValue>,
    #[serde(default)]
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub id: String,
    pub model_id: String,
    pub status: ExecutionStatus,
    pub input_snapshot: BTreeMap<String, InterfaceValue>,
    pub results: BTreeMap<String, Json>,
    pub created_at: String,
    pub started_at: Option<String>,
    pub ended_at: Option<String>,
    pub worker_id: Option<String>,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub status: ExecutionStatus,
    pub execution_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogPage {
    pub execution_id: String,
    pub offset: usize,
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsReport {
    pub execution_id: String,
    pub status: ExecutionStatus,
    pub results: BTreeMap<String, Json>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerRecord {
    pub id: String,
    pub kernel_tags: Vec<String>,
    pub last_heartbeat: String,
    pub active_job: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterWorker {
    pub kernel_tags: Vec<String>,
}

/// Everything a worker needs to run one execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobPayload {
    pub execution_id: String,
    pub model_id: String,
    pub kernel_tag: String,
    pub source: String,
    pub manifest: ModelManifest,
    /// Interface object values; files travel in `attached_files`.
    pub inputs: BTreeMap<String, Json>,
    pub attached_files: Vec<AttachedFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachedFile {
    pub name: String,
    pub filename: String,
    #[serde(with = "base64_bytes")]
    pub content: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogLines {
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultPost {
    pub status: ExecutionStatus,
    #[serde(default)]
    pub results: BTreeMap<String, Json>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetObject {
    pub value: Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub code: u16,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Json>,
}

mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interface_value_shape() {
        let v = InterfaceValue::Value(serde_json::json!(1e-3));
        assert_eq!(serde_json::to_value(&v).unwrap(), serde_json::json!({"value": 1e-3}));
        let f = InterfaceValue::File(FileRef { filename: "ieee14.m".into(), digest: "sha256:00".into(), size: 3 });
        assert_eq!(serde_json::to_value(&f).unwrap()["file"]["filename"], "ieee14.m");
    }

    #[test]
    fn attached_files_are_base64() {
        let a = AttachedFile { name: "case".into(), filename: "ieee14.m".into(), content: b"[0 60 90]".to_vec() };
        let json = serde_json::to_value(&a).unwrap();
        assert_eq!(json["content"], "WzAgNjAgOTBd");
        assert_eq!(serde_json::from_value::<AttachedFile>(json).unwrap(), a);
    }

    #[test]
    fn status_order() {
        use ExecutionStatus::*;
        assert!(Created.rank() < Queued.rank() && Queued.rank() < Running.rank());
        assert_eq!(Success.rank(), Error.rank());
        assert_eq!("running".parse::<ExecutionStatus>().unwrap(), Running);
        assert!("done".parse::<ExecutionStatus>().is_err());
        assert_eq!(serde_json::to_string(&Success).unwrap(), "\"success\"");
    }

    #[test]
    fn error_body_omits_empty_detail() {
        let b = ErrorBody { error: ErrorInfo { code: 404, message: "no such model".into(), detail: None } };
        assert_eq!(serde_json::to_string(&b).unwrap(), r#"{"error":{"code":404,"message":"no such model"}}"#);
    }
}
