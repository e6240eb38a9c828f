//! Local HTTP service: catalog, GPU snapshot, feasibility table, planning,
//! what-if checks, the questionnaire and live telemetry.

mod api;
mod stream;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::routing::{get, post};
use axum::Router;
use thiserror::Error;
use tower_http::services::ServeDir;
use tuneplan_core::hardware::{acquire, GpuInventory};

pub use api::{FieldChange, PlanRequest, QuestionnaireRequest, WhatIfRequest, WhatIfResponse};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server stopped: {0}")]
    Io(#[from] std::io::Error),
}

/// Where `/gpus` and planning requests get their inventory.
#[derive(Debug, Clone)]
pub enum GpuSource {
    Fixed(GpuInventory),
    /// Shell command whose output is parsed on every request.
    Probe(String),
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub gpus: GpuSource,
    pub runs_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
    pub poll_interval: Duration,
}

impl ServeConfig {
    pub fn new(gpus: GpuSource, runs_dir: impl Into<PathBuf>) -> Self {
        Self {
            gpus,
            runs_dir: runs_dir.into(),
            static_dir: None,
            poll_interval: Duration::from_millis(200),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    config: Arc<ServeConfig>,
}

impl AppState {
    /// Probe failures read as an empty inventory, same as a machine without GPUs.
    async fn inventory(&self) -> GpuInventory {
        match &self.config.gpus {
            GpuSource::Fixed(inv) => inv.clone(),
            GpuSource::Probe(cmd) => {
                let cmd = cmd.clone();
                tokio::task::spawn_blocking(move || acquire(&cmd).unwrap_or_default())
                    .await
                    .unwrap_or_default()
            }
        }
    }
}

pub fn router(config: ServeConfig) -> Router {
    let static_dir = config.static_dir.clone();
    let state = AppState {
        config: Arc::new(config),
    };
    let api = Router::new()
        .route("/models", get(api::models))
        .route("/datasets", get(api::datasets))
        .route("/gpus", get(api::gpus))
        .route("/feasibility", get(api::feasibility))
        .route("/plan", post(api::plan))
        .route("/whatif", post(api::whatif))
        .route("/questionnaire", get(api::questionnaire_start).post(api::questionnaire))
        .route("/runs", get(api::runs))
        .route("/runs/{id}/telemetry", get(api::telemetry))
        .route("/runs/{id}/stream", get(stream::stream))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(addr: SocketAddr, config: ServeConfig) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })?;
    axum::serve(listener, router(config)).await?;
    Ok(())
}
