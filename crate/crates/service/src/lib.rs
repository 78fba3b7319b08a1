//! Service layer for the classroom engine: the HTTP/WebSocket API for live
//! classes and the `classroom` command line for headless runs and analysis.

pub mod api;
pub mod catalog;
pub mod cli;
pub mod config;
pub mod live;
pub mod report;

use std::sync::Arc;

use anyhow::Context;
use classroom_core::store::TranscriptStore;

use crate::api::AppState;
use crate::catalog::{BackendFactory, Catalog};
use crate::config::ServiceConfig;
use crate::live::Registry;

pub fn app_state(config: &ServiceConfig, catalog: Catalog, backend: BackendFactory) -> anyhow::Result<Arc<AppState>> {
    let store = TranscriptStore::open(&config.server.data_dir)
        .with_context(|| format!("opening store {}", config.server.data_dir.display()))?;
    Ok(Arc::new(AppState {
        catalog,
        store,
        backend,
        session_defaults: config.session.clone(),
        token: config.server.token.clone(),
        live: Registry::default(),
    }))
}

/// Serves until ctrl-c, then stops every live class.
pub async fn serve(config: ServiceConfig, catalog: Catalog, backend: BackendFactory) -> anyhow::Result<()> {
    let state = app_state(&config, catalog, backend)?;
    let listener = tokio::net::TcpListener::bind(&config.server.bind)
        .await
        .with_context(|| format!("binding {}", config.server.bind))?;
    log::info!("listening on {}", listener.local_addr()?);
    let live = state.live.clone();
    axum::serve(listener, api::router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    live.stop_all();
    Ok(())
}
