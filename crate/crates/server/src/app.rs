//! Wiring: config to a running server.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use lbsn_core::error::SeedParseError;
use lbsn_core::gazetteer::Gazetteer;
use lbsn_core::geostore::{parse_poi_seed, Poi};
use lbsn_core::identity::{OutboxFile, PasswordHasher};
use lbsn_core::localinfo::{parse_news_seed, NewsDesk, SyntheticWeather};
use lbsn_core::messaging::DirBlobStore;
use lbsn_core::service::{Service, SystemClock};
use lbsn_core::Error;
use tokio::task::JoinHandle;

use crate::api::{self, AppState};
use crate::config::{Config, ConfigError};
use crate::tiles::TileService;
use crate::wal::{RecoveryReport, Store};

pub const SMS_OUTBOX: &str = "sms_outbox.log";
pub const BLOB_DIR: &str = "blobs";
pub const TILE_DIR: &str = "tiles";
/// How often lapsed heartbeats and sessions are swept.
pub const SWEEP_INTERVAL: Duration = Duration::from_secs(5);

/// Sample POIs and news used when the config names no files.
pub const SAMPLE_POIS: &str = include_str!("../data/pois.tsv");
pub const SAMPLE_NEWS: &str = include_str!("../data/news.tsv");

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Seed { path: String, source: SeedParseError },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Core(#[from] Error),
}

fn read_seed<T>(
    path: Option<&Path>,
    builtin: &str,
    parse: impl Fn(&str) -> Result<T, SeedParseError>,
) -> Result<T, AppError> {
    let (text, name) = match path {
        Some(p) => (std::fs::read_to_string(p)?, p.display().to_string()),
        None => (builtin.to_string(), "built-in".to_string()),
    };
    parse(&text).map_err(|source| AppError::Seed { path: name, source })
}

pub struct Seeds {
    pub gazetteer: Gazetteer,
    pub pois: Vec<Poi>,
    pub news: NewsDesk,
}

pub fn load_seeds(cfg: &Config) -> Result<Seeds, AppError> {
    Ok(Seeds {
        gazetteer: read_seed(cfg.gazetteer_path.as_deref(), lbsn_core::gazetteer::DEFAULT_GAZETTEER, Gazetteer::parse)?,
        pois: read_seed(cfg.poi_path.as_deref(), SAMPLE_POIS, parse_poi_seed)?,
        news: NewsDesk::new(read_seed(cfg.news_path.as_deref(), SAMPLE_NEWS, parse_news_seed)?),
    })
}

/// Recovers the data directory and builds the service over it.
pub fn open_service(cfg: &Config, hasher: PasswordHasher) -> Result<(Service, RecoveryReport), AppError> {
    let seeds = load_seeds(cfg)?;
    let (store, state, report) = Store::open(&cfg.data_dir)?;
    if let Some(w) = &report.warning {
        tracing::warn!(warning = %w, "log recovery");
    }
    tracing::info!(snapshot = report.snapshot_seq, replayed = report.replayed, "state recovered");
    let svc = Service::builder()
        .state(state)
        .journal(store)
        .clock(Arc::new(SystemClock))
        .hasher(hasher)
        .sms(Arc::new(OutboxFile::new(cfg.data_dir.join(SMS_OUTBOX))))
        .blobs(Arc::new(DirBlobStore::new(cfg.data_dir.join(BLOB_DIR))?))
        .weather(Arc::new(SyntheticWeather { seed: cfg.provider_seed }))
        .news(seeds.news)
        .gazetteer(seeds.gazetteer)
        .pois(seeds.pois)
        .session_ttl_ms(cfg.session_ttl_ms())
        .build();
    Ok((svc, report))
}

pub struct Running {
    pub addr: SocketAddr,
    pub service: Arc<Service>,
    pub data_dir: PathBuf,
    server: JoinHandle<std::io::Result<()>>,
    sweeper: JoinHandle<()>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
}

impl Running {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting requests, waits for in-flight ones and snapshots.
    pub async fn shutdown(mut self) -> Result<(), AppError> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        self.sweeper.abort();
        self.server.await.map_err(std::io::Error::other)??;
        let svc = self.service.clone();
        tokio::task::spawn_blocking(move || svc.checkpoint())
            .await
            .map_err(std::io::Error::other)??;
        Ok(())
    }
}

/// Binds the listener and starts serving in the background.
pub async fn start(cfg: &Config, hasher: PasswordHasher) -> Result<Running, AppError> {
    let (svc, _) = {
        let cfg = cfg.clone();
        tokio::task::spawn_blocking(move || open_service(&cfg, hasher))
            .await
            .map_err(std::io::Error::other)??
    };
    let svc = Arc::new(svc);
    let tiles = TileService::new(cfg.data_dir.join(TILE_DIR), cfg);
    let app = api::router(AppState::new(svc.clone(), tiles));
    let listener = tokio::net::TcpListener::bind(cfg.listen_addr).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    let sweep_svc = svc.clone();
    let sweeper = tokio::spawn(async move {
        let mut tick = tokio::time::interval(SWEEP_INTERVAL);
        loop {
            tick.tick().await;
            let s = sweep_svc.clone();
            if let Ok(Err(e)) = tokio::task::spawn_blocking(move || s.sweep_presence()).await {
                tracing::warn!(error = %e, "presence sweep failed");
            }
        }
    });
    Ok(Running {
        addr,
        service: svc,
        data_dir: cfg.data_dir.clone(),
        server,
        sweeper,
        stop: Some(tx),
    })
}

/// Runs until interrupted. Prints `listening on ADDR` once bound.
pub async fn serve(cfg: Config) -> Result<(), AppError> {
    let running = start(&cfg, PasswordHasher::default()).await?;
    println!("listening on {}", running.addr);
    std::io::stdout().flush()?;
    tokio::signal::ctrl_c().await?;
    tracing::info!("shutting down");
    running.shutdown().await
}
