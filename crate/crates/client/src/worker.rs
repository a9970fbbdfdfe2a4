//! The worker side of the protocol: register, long-poll for jobs, stream
//! logs, post one result per job.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use modelhub_core::kernel::{run_native, NATIVE_KERNEL_TAG};
use modelhub_core::wire::{
    ExecutionRecord, ExecutionStatus, JobPayload, LogLines, RegisterWorker, ResultPost, WorkerRecord,
};
use reqwest::Method;
use serde_json::Value;

use crate::{is_no_content, ClientError, Interface, Result};

#[derive(Debug, Clone)]
pub struct WorkerClient {
    session: Interface,
    record: WorkerRecord,
}

impl WorkerClient {
    /// Registers a worker for `kernel_tags`; requires a worker-class token.
    pub fn register(session: Interface, kernel_tags: &[&str]) -> Result<Self> {
        let body = RegisterWorker { kernel_tags: kernel_tags.iter().map(|t| t.to_string()).collect() };
        let record = session.send(session.request(Method::POST, session.url(&["workers", "register"])).json(&body))?;
        Ok(WorkerClient { session, record })
    }

    pub fn id(&self) -> &str {
        &self.record.id
    }

    pub fn record(&self) -> &WorkerRecord {
        &self.record
    }

    /// Long-polls for the next job. Never retried: a lost response may
    /// already have assigned a job, which the server then reclaims.
    pub fn next_job(&self, wait: Duration) -> Result<Option<JobPayload>> {
        let mut url = self.session.url(&["workers", &self.record.id, "jobs", "next"]);
        url.query_pairs_mut().append_pair("wait", &wait.as_secs_f64().to_string());
        let resp = self.session.request(Method::GET, url).timeout(wait + Duration::from_secs(30)).send()?;
        let resp = Interface::check(resp)?;
        if is_no_content(&resp) {
            return Ok(None);
        }
        Ok(Some(resp.json()?))
    }

    pub fn heartbeat(&self) -> Result<WorkerRecord> {
        let url = self.session.url(&["workers", &self.record.id, "heartbeat"]);
        self.session.send(self.session.request(Method::POST, url))
    }

    pub fn post_log(&self, execution_id: &str, lines: &[String]) -> Result<()> {
        let url = self.session.url(&["executions", execution_id, "log"]);
        let body = LogLines { lines: lines.to_vec() };
        self.session.send_empty(self.session.request(Method::POST, url).json(&body))
    }

    pub fn post_result(
        &self,
        execution_id: &str,
        status: ExecutionStatus,
        results: BTreeMap<String, Value>,
    ) -> Result<ExecutionRecord> {
        let url = self.session.url(&["executions", execution_id, "result"]);
        let body = ResultPost { status, results, worker_id: Some(self.record.id.clone()) };
        self.session.send(self.session.request(Method::POST, url).json(&body))
    }

    /// Runs one job with the native LP kernel and reports it.
    pub fn execute_native(&self, job: JobPayload) -> Result<ExecutionRecord> {
        if job.kernel_tag != NATIVE_KERNEL_TAG {
            self.post_log(&job.execution_id, &[format!("error: kernel {:?} is not supported here", job.kernel_tag)])?;
            return self.post_result(&job.execution_id, ExecutionStatus::Error, BTreeMap::new());
        }
        let files: Vec<(String, Vec<u8>)> = job.attached_files.into_iter().map(|f| (f.name, f.content)).collect();
        let outcome = run_native(&job.manifest, &job.source, &job.inputs, &files);
        self.post_log(&job.execution_id, &outcome.log)?;
        let status = if outcome.success { ExecutionStatus::Success } else { ExecutionStatus::Error };
        self.post_result(&job.execution_id, status, outcome.results)
    }

    /// Serves native LP jobs until `stop` is set, sending heartbeats every
    /// `heartbeat` from a background thread.
    pub fn serve_native(&self, stop: &AtomicBool, poll: Duration, heartbeat: Duration) -> Result<()> {
        let beating = Arc::new(AtomicBool::new(true));
        let beat = {
            let me = self.clone();
            let beating = Arc::clone(&beating);
            thread::spawn(move || {
                while beating.load(Ordering::Relaxed) {
                    // A failed heartbeat is retried on the next tick.
                    let _ = me.heartbeat();
                    thread::sleep(heartbeat);
                }
            })
        };
        let mut outcome = Ok(());
        while !stop.load(Ordering::Relaxed) {
            match self.next_job(poll) {
                Ok(Some(job)) => {
                    if let Err(e) = self.execute_native(job) {
                        eprintln!("worker {}: {e}", self.id());
                    }
                }
                Ok(None) => {}
                Err(e @ ClientError::Api { .. }) => {
                    outcome = Err(e);
                    break;
                }
                Err(e) => {
                    eprintln!("worker {}: {e}; retrying", self.id());
                    thread::sleep(Duration::from_secs(1));
                }
            }
        }
        beating.store(false, Ordering::Relaxed);
        let _ = beat.join();
        outcome
    }
}
