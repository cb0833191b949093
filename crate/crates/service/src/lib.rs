//! HTTP session service for the critique dialogue, plus a participant
//! simulator that drives the same operations.
//!
//! Sessions live in memory. A completed session's transcript is written
//! once, as JSONL, to the configured directory; in-flight sessions do not
//! survive a restart.

pub mod api;
pub mod client;
pub mod config;
pub mod error;
pub mod simulate;
pub mod store;

use std::sync::Arc;

use aact_core::study::Study;
use aact_core::workflow::Clock;

pub use api::router;
pub use config::ServiceConfig;
pub use error::ServiceError;
pub use store::SessionStore;

/// Loads the model and data named by `config` into a store over the
/// held-out tasks.
pub fn build_store(config: &ServiceConfig) -> Result<SessionStore, ServiceError> {
    let study = Study::load(&config.model, &config.data)?;
    let tasks = study.test.rows().to_vec();
    let mut store = SessionStore::new(Arc::new(study.engine), tasks, config.params.clone());
    if config.logical_clock {
        store = store.with_clock(Clock::Logical);
    }
    if let Some(dir) = &config.transcripts {
        store = store.with_sink(dir);
    }
    Ok(store)
}

/// Loads everything, binds and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let store = Arc::new(build_store(&config)?);
    let app = match &config.static_dir {
        Some(dir) => api::router_with_static(store, dir),
        None => api::router(store),
    };
    let addr = format!("{}:{}", config.host, config.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: addr.clone(),
            source,
        })?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, app)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}
