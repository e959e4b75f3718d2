//! `key = value` configuration file.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use crate::tiles::Layer;

/// Upstream value that makes the tile layer render test tiles locally.
pub const SYNTHETIC: &str = "synthetic";

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub listen_addr: SocketAddr,
    pub data_dir: PathBuf,
    /// URL templates with `{z}`, `{x}`, `{y}`, or [`SYNTHETIC`].
    pub tile_normal: String,
    pub tile_satellite: String,
    pub tile_hybrid: String,
    pub gazetteer_path: Option<PathBuf>,
    pub poi_path: Option<PathBuf>,
    pub news_path: Option<PathBuf>,
    pub provider_seed: u64,
    pub session_ttl_hours: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            listen_addr: "127.0.0.1:8080".parse().unwrap(),
            data_dir: PathBuf::from("lbsn-data"),
            tile_normal: SYNTHETIC.into(),
            tile_satellite: SYNTHETIC.into(),
            tile_hybrid: SYNTHETIC.into(),
            gazetteer_path: None,
            poi_path: None,
            news_path: None,
            provider_seed: 0,
            session_ttl_hours: 24,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

impl Config {
    /// Relative paths in the file are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| ConfigError::Syntax { line: i + 1, reason };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let path = || Some(base.join(value));
            match key {
                "listen_addr" => cfg.listen_addr = value.parse().map_err(|_| err(format!("bad address {value:?}")))?,
                "data_dir" => cfg.data_dir = base.join(value),
                "tile_upstream.normal" => cfg.tile_normal = value.into(),
                "tile_upstream.satellite" => cfg.tile_satellite = value.into(),
                "tile_upstream.hybrid" => cfg.tile_hybrid = value.into(),
                "gazetteer_path" => cfg.gazetteer_path = path(),
                "poi_path" => cfg.poi_path = path(),
                "news_path" => cfg.news_path = path(),
                "provider_seed" => cfg.provider_seed = value.parse().map_err(|_| err("provider_seed must be an integer".into()))?,
                "session_ttl_hours" => {
                    cfg.session_ttl_hours = value
                        .parse()
                        .ok()
                        .filter(|h| *h > 0)
                        .ok_or_else(|| err("session_ttl_hours must be a positive integer".into()))?
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Config::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn upstream(&self, layer: Layer) -> &str {
        match layer {
            Layer::Normal => &self.tile_normal,
            Layer::Satellite => &self.tile_satellite,
            Layer::Hybrid => &self.tile_hybrid,
        }
    }

    pub fn session_ttl_ms(&self) -> i64 {
        (self.session_ttl_hours as i64).saturating_mul(3_600_000)
    }

    /// Renders the config back to file syntax.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "listen_addr = {}\ndata_dir = {}\ntile_upstream.normal = {}\ntile_upstream.satellite = {}\ntile_upstream.hybrid = {}\nprovider_seed = {}\nsession_ttl_hours = {}\n",
            self.listen_addr,
            self.data_dir.display(),
            self.tile_normal,
            self.tile_satellite,
            self.tile_hybrid,
            self.provider_seed,
            self.session_ttl_hours
        );
        for (k, v) in [
            ("gazetteer_path", &self.gazetteer_path),
            ("poi_path", &self.poi_path),
            ("news_path", &self.news_path),
        ] {
            if let Some(p) = v {
                out.push_str(&format!("{k} = {}\n", p.display()));
            }
        }
        out
    }
}
