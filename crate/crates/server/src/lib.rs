//! HTTP service and command-line tooling around `scribe-core`.

pub mod auth;
pub mod config;
pub mod error;
pub mod export;
pub mod openapi;
pub mod report;
pub mod routes;

use std::net::SocketAddr;
use std::sync::Arc;

use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use scribe_core::asr::AsrGateway;
use scribe_core::domain::{Role, Timestamp, UserId, UserProfile};
use scribe_core::llm::LlmGateway;
use scribe_core::pipeline::WorkerPool;
use scribe_core::store::{StoreError, StoreOptions};
use scribe_core::{Orchestrator, OrchestratorConfig, ScribeError, Store};

use crate::auth::{Authenticator, DEV_USER};
use crate::config::{ApiConfig, AuthMode, ConfigError};
use crate::routes::AppState;

/// Actor recorded in the audit log for configuration-driven changes.
pub const SYSTEM_ACTOR: &str = "system";

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    ConfigInvalid(#[from] ConfigError),
    #[error("address {0} is already in use")]
    AddressInUse(SocketAddr),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("storage root is unusable: {0}")]
    Storage(#[from] StoreError),
    #[error(transparent)]
    Startup(#[from] ScribeError),
}

/// Opens storage, builds the gateways and seeds configured users and
/// facilities. Does not start workers.
pub fn open_orchestrator(config: &ApiConfig) -> Result<Arc<Orchestrator>, ServeError> {
    config.validate()?;
    let store = Store::open_with(
        &config.storage_root,
        StoreOptions { blob_quota_bytes: config.blob_quota_bytes },
    )?;
    let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
    let asr = AsrGateway::new(config.asr.clone(), config.retry).map_err(|e| invalid(&e))?;
    let llm = LlmGateway::new(config.llm.clone(), config.retry).map_err(|e| invalid(&e))?;
    let mut orch_config = OrchestratorConfig::new(
        config.asr_default_id().unwrap_or_default(),
        config.llm_default_id().unwrap_or_default(),
    );
    orch_config.lexicon = config.vocabulary()?;
    orch_config.transcription_workers = config.workers.transcription;
    orch_config.generation_workers = config.workers.generation;
    let orch = Orchestrator::new(Arc::new(store), Arc::new(asr), Arc::new(llm), orch_config)?;

    for seed in &config.users {
        orch.ensure_user(UserProfile {
            id: seed.id.clone(),
            display_name: seed.display_name.clone().unwrap_or_else(|| seed.id.to_string()),
            role: seed.role,
            created_at: Timestamp::now(),
        })?;
    }
    if config.auth.mode == AuthMode::NoneDev {
        orch.ensure_user(UserProfile {
            id: UserId::from(DEV_USER),
            display_name: "Developer".into(),
            role: Role::Admin,
            created_at: Timestamp::now(),
        })?;
    }
    for facility in &config.facilities {
        orch.ensure_facility(SYSTEM_ACTOR, facility.clone())?;
    }
    Ok(Arc::new(orch))
}

pub struct ServerHandle {
    addr: SocketAddr,
    orch: Arc<Orchestrator>,
    stop: oneshot::Sender<()>,
    server: JoinHandle<std::io::Result<()>>,
    workers: WorkerPool,
    recovered: usize,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn orchestrator(&self) -> &Arc<Orchestrator> {
        &self.orch
    }

    /// Jobs re-queued from a previous run at startup.
    pub fn recovered_jobs(&self) -> usize {
        self.recovered
    }

    /// Stops accepting requests, lets in-flight requests finish, then
    /// waits for running jobs.
    pub async fn shutdown(self) -> std::io::Result<()> {
        let _ = self.stop.send(());
        let served = match self.server.await {
            Ok(result) => result,
            Err(e) => Err(std::io::Error::other(e)),
        };
        self.workers.shutdown().await;
        served
    }
}

/// Binds the listener, recovers unfinished jobs, starts workers and serves
/// until [`ServerHandle::shutdown`].
pub async fn serve(config: ApiConfig) -> Result<ServerHandle, ServeError> {
    config.validate()?;
    let listener = TcpListener::bind(config.listen).await.map_err(|source| {
        if source.kind() == std::io::ErrorKind::AddrInUse {
            ServeError::AddressInUse(config.listen)
        } else {
            ServeError::Bind { addr: config.listen, source }
        }
    })?;
    let addr = listener
        .local_addr()
        .map_err(|source| ServeError::Bind { addr: config.listen, source })?;

    let orch = open_orchestrator(&config)?;
    let recovered = orch.recover()?;
    if recovered > 0 {
        tracing::info!(recovered, "re-queued unfinished jobs");
    }
    let workers = orch.start();

    let state = AppState::new(Arc::clone(&orch), Authenticator::new(&config.auth), &config);
    let app = routes::router(state);
    let (stop, stopped) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    tracing::info!(%addr, "listening");
    Ok(ServerHandle { addr, orch, stop, server, workers, recovered })
}
