//! REST service for the experiment tracker. All routes live under `/api/v1`.

mod fetch;
mod routes;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use openml_lite_core::registry::{Registry, RegistryConfig, RegistryError, UrlFetcher};
use openml_lite_core::service::Service;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

pub use fetch::HttpFetcher;
pub use routes::{router, HttpError};

pub const API_KEY_HEADER: &str = "x-api-key";
pub const MAX_DATASET_BYTES: usize = 256 * 1024 * 1024;
pub const MAX_PREDICTION_BYTES: usize = 64 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<Service>,
    /// Bounds concurrent run evaluations.
    pub eval_permits: Arc<Semaphore>,
}

impl AppState {
    pub fn registry(&self) -> &Arc<Registry> {
        self.service.registry()
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub registry: RegistryConfig,
    pub eval_workers: usize,
    pub allow_file_urls: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            registry: RegistryConfig::default(),
            eval_workers: std::thread::available_parallelism().map_or(2, |n| n.get()),
            allow_file_urls: false,
        }
    }
}

/// A started store: the shared state plus the bootstrap admin key, which is
/// only returned the very first time a store is opened.
pub struct Started {
    pub state: AppState,
    pub bootstrap_key: Option<String>,
}

/// Opens (or creates) the store, creates the admin user on first start and
/// finishes work interrupted by a previous shutdown.
pub fn open_store(data_dir: &Path, config: ServerConfig) -> Result<Started, RegistryError> {
    let fetcher: Arc<dyn UrlFetcher> = Arc::new(HttpFetcher::new(config.allow_file_urls, config.registry.max_dataset_bytes));
    let registry = Arc::new(Registry::open(data_dir, config.registry, fetcher)?);
    let bootstrap_key = registry.bootstrap_admin()?.map(|(_, key)| key);
    let service = Arc::new(Service::new(registry));
    if let Err(e) = service.recover() {
        tracing::warn!("recovery incomplete: {e}");
    }
    let state = AppState { service, eval_permits: Arc::new(Semaphore::new(config.eval_workers.max(1))) };
    Ok(Started { state, bootstrap_key })
}

pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Binds and serves on a background task; returns the bound address.
pub async fn spawn(addr: SocketAddr, state: AppState) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let bound = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = serve(listener, state).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok(bound)
}
