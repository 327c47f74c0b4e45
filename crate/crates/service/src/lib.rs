//! Service shell: configuration, the installation loop, the HTTP API with
//! its event stream, audit jobs and a stub capability server.

pub mod audits;
pub mod config;
pub mod events;
pub mod http;
pub mod runtime;
pub mod stub_server;

use std::sync::Arc;

use airays_core::backends::ModelBackend;
use airays_core::catalog::Catalog;
use tokio::net::TcpListener;

use crate::config::ServiceConfig;
use crate::runtime::Shared;

/// Start the installation loop and serve the API on `listener` until the
/// returned future is dropped or the listener fails.
pub async fn serve(
    config: ServiceConfig,
    catalog: Catalog,
    backends: Arc<dyn ModelBackend>,
    listener: TcpListener,
) -> std::io::Result<Arc<Shared>> {
    let capture_dir = config.capture_dir.clone();
    let (shared, runtime) = runtime::build(config, catalog, backends);
    tokio::spawn(runtime.run());
    if let Some(dir) = capture_dir {
        tokio::spawn(runtime::watch_capture_dir(shared.clone(), dir));
    }
    axum::serve(listener, http::router(shared.clone())).await?;
    Ok(shared)
}
