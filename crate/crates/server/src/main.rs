use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use openml_lite_core::registry::RegistryConfig;
use openml_lite_server::{open_store, serve, ServerConfig};

/// Self-hosted experiment tracking server.
#[derive(Debug, Parser)]
#[command(name = "openml-lite-server", version)]
struct Args {
    /// Directory holding blobs, journal and snapshot.
    #[arg(long, default_value = "openml-lite-data")]
    data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Maximum number of runs evaluated at the same time.
    #[arg(long)]
    eval_workers: Option<usize>,
    /// Allow datasets referenced by file:// URLs (reads the server's disk).
    #[arg(long)]
    allow_file_urls: bool,
    /// Skip fsync on journal appends (faster, less durable).
    #[arg(long)]
    no_fsync: bool,
}

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let args = Args::parse();
    let mut config = ServerConfig {
        registry: RegistryConfig { sync: !args.no_fsync, ..RegistryConfig::default() },
        allow_file_urls: args.allow_file_urls,
        ..ServerConfig::default()
    };
    if let Some(n) = args.eval_workers {
        config.eval_workers = n;
    }
    let data_dir = args.data_dir.clone();
    let started = match tokio::task::spawn_blocking(move || open_store(&data_dir, config)).await.expect("startup task") {
        Ok(s) => s,
        Err(e) => {
            eprintln!("cannot open store at {}: {e}", args.data_dir.display());
            std::process::exit(1);
        }
    };
    if let Some(key) = &started.bootstrap_key {
        println!("bootstrap admin API key: {key}");
        println!("(shown only once; store it now)");
    }
    let listener = match tokio::net::TcpListener::bind(args.bind).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("cannot bind {}: {e}", args.bind);
            std::process::exit(1);
        }
    };
    tracing::info!("listening on http://{}/api/v1", listener.local_addr().map_or(args.bind, |a| a));
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    tokio::select! {
        r = serve(listener, started.state) => {
            if let Err(e) = r {
                eprintln!("server error: {e}");
                std::process::exit(1);
            }
        }
        _ = shutdown => tracing::info!("shutting down"),
    }
}
