//! The modelhub backend: model registry, REST API, job dispatch to compute
//! workers and an embedded `native-lp` worker.

pub mod api;
pub mod auth;
pub mod error;
pub mod service;
pub mod store;
pub mod worker;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub use error::{ApiError, ApiResult};
pub use service::{Service, ServiceConfig};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    pub data_dir: PathBuf,
    pub embedded_worker: bool,
    pub service: ServiceConfig,
    /// How often lost workers are looked for.
    pub reap_interval: Duration,
}

impl ServerConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServerConfig {
            addr: SocketAddr::from(([127, 0, 0, 1], 0)),
            data_dir: data_dir.into(),
            embedded_worker: true,
            service: ServiceConfig::default(),
            reap_interval: Duration::from_secs(5),
        }
    }
}

/// A server running on the current tokio runtime.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub service: Arc<Service>,
    tasks: Vec<JoinHandle<()>>,
}

impl RunningServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Resolves when the HTTP server stops.
    pub async fn wait(mut self) {
        if let Some(http) = self.tasks.first_mut() {
            let _ = http.await;
        }
    }

    pub fn abort(&self) {
        self.tasks.iter().for_each(JoinHandle::abort);
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.abort();
    }
}

/// Opens the store, binds the listener and spawns the HTTP server, the
/// reaper and (if enabled) the embedded worker.
pub async fn start(config: ServerConfig) -> anyhow::Result<RunningServer> {
    let service = Arc::new(Service::open(&config.data_dir, config.service.clone())?);
    let reclaimed = service.reclaim_embedded_workers()?;
    if reclaimed > 0 {
        tracing::info!("released {reclaimed} job(s) held by the previous embedded worker");
    }
    let listener = TcpListener::bind(config.addr).await?;
    let addr = listener.local_addr()?;
    let app = api::router(Arc::clone(&service));

    let mut tasks = vec![tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("http server stopped: {e}");
        }
    })];
    let reaper = Arc::clone(&service);
    let interval = config.reap_interval;
    tasks.push(tokio::spawn(async move {
        let mut tick = tokio::time::interval(interval);
        loop {
            tick.tick().await;
            match reaper.reap() {
                Ok(0) => {}
                Ok(n) => tracing::warn!("released {n} job(s) from unresponsive workers"),
                Err(e) => tracing::error!("reaper: {e}"),
            }
        }
    }));
    if config.embedded_worker {
        tasks.push(tokio::spawn(worker::run_embedded_worker(Arc::clone(&service))));
    }
    Ok(RunningServer { addr, service, tasks })
}

/// A server on its own runtime, for tests and blocking callers. Dropping it
/// stops everything.
pub struct BackgroundServer {
    server: Option<RunningServer>,
    runtime: Option<tokio::runtime::Runtime>,
}

impl BackgroundServer {
    pub fn start(config: ServerConfig) -> anyhow::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build()?;
        let server = runtime.block_on(start(config))?;
        Ok(BackgroundServer { server: Some(server), runtime: Some(runtime) })
    }

    pub fn url(&self) -> String {
        self.server.as_ref().expect("running").url()
    }

    pub fn service(&self) -> &Service {
        &self.server.as_ref().expect("running").service
    }

    pub fn create_token(&self, user: &str, worker: bool) -> String {
        self.service().create_token(user, worker).expect("token creation")
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        drop(self.server.take());
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}
