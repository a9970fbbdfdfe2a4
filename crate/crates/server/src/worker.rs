//! The in-process `native-lp` worker.
//!
//! It speaks the same protocol as external workers, but calls the service
//! directly instead of going through HTTP.

use std::sync::Arc;
use std::time::Duration;

use modelhub_core::kernel::{run_native, NATIVE_KERNEL_TAG};
use modelhub_core::wire::{ExecutionStatus, JobPayload, ResultPost};

use crate::auth::Principal;
use crate::error::ApiResult;
use crate::service::Service;

pub const EMBEDDED_USER: &str = "modelhub-embedded";

pub async fn run_embedded_worker(service: Arc<Service>) {
    let me = Principal { user: EMBEDDED_USER.to_string(), worker: true };
    let worker = match service.register(&me, vec![NATIVE_KERNEL_TAG.to_string()], true) {
        Ok(w) => w,
        Err(e) => {
            tracing::error!("embedded worker could not register: {e}");
            return;
        }
    };
    tracing::info!(worker = %worker.id, "embedded native-lp worker ready");
    let poll = service.config().max_long_poll;
    loop {
        match service.next_job(&me, &worker.id, poll).await {
            Ok(Some(job)) => {
                if let Err(e) = execute(&service, &me, &worker.id, job).await {
                    tracing::warn!("embedded worker: {e}");
                }
            }
            Ok(None) => {}
            Err(e) => {
                tracing::warn!("embedded worker poll failed: {e}");
                tokio::time::sleep(Duration::from_millis(200)).await;
            }
        }
    }
}

async fn execute(service: &Arc<Service>, me: &Principal, worker_id: &str, job: JobPayload) -> ApiResult<()> {
    let execution_id = job.execution_id.clone();
    let beat = {
        let service = Arc::clone(service);
        let me = me.clone();
        let worker_id = worker_id.to_string();
        let every = service.config().worker_timeout / 3;
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            loop {
                tick.tick().await;
                if let Err(e) = service.heartbeat(&me, &worker_id) {
                    tracing::warn!("embedded worker heartbeat failed: {e}");
                }
            }
        })
    };

    let outcome = tokio::task::spawn_blocking(move || {
        let files: Vec<(String, Vec<u8>)> = job.attached_files.into_iter().map(|f| (f.name, f.content)).collect();
        run_native(&job.manifest, &job.source, &job.inputs, &files)
    })
    .await;
    beat.abort();

    let post = match outcome {
        Ok(outcome) => {
            service.post_log(me, &execution_id, &outcome.log)?;
            ResultPost {
                status: if outcome.success { ExecutionStatus::Success } else { ExecutionStatus::Error },
                results: outcome.results,
                worker_id: Some(worker_id.to_string()),
            }
        }
        Err(e) => {
            service.post_log(me, &execution_id, &[format!("error: kernel crashed: {e}")])?;
            ResultPost { status: ExecutionStatus::Error, results: Default::default(), worker_id: Some(worker_id.to_string()) }
        }
    };
    service.post_result(me, &execution_id, post)?;
    Ok(())
}
