//! Annotation service: projects stored as plain files, driven over HTTP.
//!
//! A human (or a simulated annotator) repeatedly fetches the open batch,
//! submits labels for each segment, and the service retrains in the
//! background once a batch is complete.

pub mod api;
pub mod client;
pub mod error;
pub mod project;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;

pub use api::{router, AppState};
pub use error::{Result, ServiceError};
pub use project::{JobState, Project};

/// Serves the projects under `root` on `addr` until `shutdown` resolves.
/// `on_bound` receives the bound address (useful with port 0).
pub async fn serve(
    root: PathBuf,
    addr: SocketAddr,
    on_bound: impl FnOnce(SocketAddr),
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<()> {
    let state = AppState::open(root)?;
    state.resume_training();
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::io(format!("<socket {addr}>"), e))?;
    let bound = listener
        .local_addr()
        .map_err(|e| ServiceError::io(format!("<socket {addr}>"), e))?;
    on_bound(bound);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| ServiceError::io(format!("<socket {bound}>"), e))
}
