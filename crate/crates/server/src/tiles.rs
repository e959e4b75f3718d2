//! z/x/y map tiles: disk cache in front of an upstream per layer.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use lbsn_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::{Config, SYNTHETIC};

pub const TILE_SIZE: u32 = 256;
pub const MAX_ZOOM: u8 = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Normal,
    Satellite,
    Hybrid,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Normal, Layer::Satellite, Layer::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Layer::Normal => "normal",
            Layer::Satellite => "satellite",
            Layer::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Layer::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::BadRequest(format!("unknown layer {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileRef {
    pub layer: Layer,
    pub z: u8,
    pub x: u32,
    pub y: u32,
}

impl TileRef {
    pub fn new(layer: Layer, z: u64, x: u64, y: u64) -> Result<TileRef, Error> {
        if z > MAX_ZOOM as u64 {
            return Err(Error::TileOutOfRange);
        }
        let n = 1u64 << z;
        if x >= n || y >= n {
            return Err(Error::TileOutOfRange);
        }
        Ok(TileRef {
            layer,
            z: z as u8,
            x: x as u32,
            y: y as u32,
        })
    }

    fn url(&self, template: &str) -> String {
        template
            .replace("{z}", &self.z.to_string())
            .replace("{x}", &self.x.to_string())
            .replace("{y}", &self.y.to_string())
    }
}

/// Guesses the image type from magic bytes.
pub fn content_type(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        "image/png"
    } else if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        "image/jpeg"
    } else if bytes.len() >= 12 && &bytes[0..4] == b"RIFF" && &bytes[8..12] == b"WEBP" {
        "image/webp"
    } else {
        "application/octet-stream"
    }
}

pub struct TileService {
    cache_dir: PathBuf,
    upstream: [String; 3],
    client: reqwest::Client,
}

impl TileService {
    pub fn new(cache_dir: PathBuf, cfg: &Config) -> TileService {
        TileService {
            cache_dir,
            upstream: Layer::ALL.map(|l| cfg.upstream(l).to_string()),
            client: reqwest::Client::builder()
                .timeout(Duration::from_secs(10))
                .user_agent(concat!("lbsn/", env!("CARGO_PKG_VERSION")))
                .build()
                .expect("http client"),
        }
    }

    fn cache_path(&self, t: &TileRef) -> PathBuf {
        self.cache_dir
            .join(t.layer.name())
            .join(t.z.to_string())
            .join(t.x.to_string())
            .join(format!("{}.tile", t.y))
    }

    /// Tile bytes, from cache when present.
    pub async fn get(&self, t: TileRef) -> Result<Vec<u8>, Error> {
        let path = self.cache_path(&t);
        if let Ok(bytes) = tokio::fs::read(&path).await {
            return Ok(bytes);
        }
        let upstream = &self.upstream[t.layer as usize];
        let bytes = if upstream == SYNTHETIC {
            render_synthetic(&t)
        } else {
            self.fetch(&t.url(upstream)).await?
        };
        if let Err(e) = store(&path, &bytes).await {
            tracing::warn!(path = %path.display(), error = %e, "tile cache write failed");
        }
        Ok(bytes)
    }

    async fn fetch(&self, url: &str) -> Result<Vec<u8>, Error> {
        let unavailable = |e: String| Error::UpstreamUnavailable(e);
        let resp = self
            .client
            .get(url)
            .send()
            .await
            .map_err(|e| unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(unavailable(format!("{url}: status {}", resp.status())));
        }
        let body = resp.bytes().await.map_err(|e| unavailable(e.to_string()))?;
        Ok(body.to_vec())
    }
}

async fn store(path: &std::path::Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        tokio::fs::create_dir_all(dir).await?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    tokio::fs::write(&tmp, bytes).await?;
    tokio::fs::rename(&tmp, path).await
}

// 3x5 glyphs, one row per entry, high bit on the left.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '/' => [1, 1, 2, 4, 4],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'Y' => [5, 5, 2, 2, 2],
        _ => [0; 5],
    }
}

struct Canvas {
    px: Vec<u8>,
}

impl Canvas {
    fn fill(&mut self, x0: u32, y0: u32, w: u32, h: u32, rgb: [u8; 3]) {
        for y in y0..(y0 + h).min(TILE_SIZE) {
            for x in x0..(x0 + w).min(TILE_SIZE) {
                let i = ((y * TILE_SIZE + x) * 3) as usize;
                self.px[i..i + 3].copy_from_slice(&rgb);
            }
        }
    }

    fn text(&mut self, s: &str, x0: u32, y0: u32, scale: u32, rgb: [u8; 3]) {
        for (n, c) in s.chars().enumerate() {
            let gx = x0 + n as u32 * 4 * scale;
            for (row, bits) in glyph(c).iter().enumerate() {
                for col in 0..3 {
                    if bits & (4 >> col) != 0 {
                        self.fill(gx + col * scale, y0 + row as u32 * scale, scale, scale, rgb);
                    }
                }
            }
        }
    }
}

/// Deterministic 256x256 PNG showing the layer name and z/x/y inside a
/// border.
pub fn render_synthetic(t: &TileRef) -> Vec<u8> {
    let (bg, fg) = match t.layer {
        Layer::Normal => ([240, 232, 210], [40, 40, 40]),
        Layer::Satellite => ([34, 70, 48], [235, 235, 235]),
        Layer::Hybrid => ([70, 96, 130], [250, 240, 150]),
    };
    let mut c = Canvas {
        px: vec![0; (TILE_SIZE * TILE_SIZE * 3) as usize],
    };
    c.fill(0, 0, TILE_SIZE, TILE_SIZE, bg);
    for (x, y, w, h) in [(0, 0, TILE_SIZE, 3), (0, TILE_SIZE - 3, TILE_SIZE, 3), (0, 0, 3, TILE_SIZE), (TILE_SIZE - 3, 0, 3, TILE_SIZE)] {
        c.fill(x, y, w, h, fg);
    }
    let name = t.layer.name().to_uppercase();
    let coords = format!("{}/{}/{}", t.z, t.x, t.y);
    let fit = |s: &str| ((TILE_SIZE - 24) / (s.len() as u32 * 4)).clamp(1, 5);
    c.text(&name, 12, 80, fit(&name), fg);
    c.text(&coords, 12, 140, fit(&coords), fg);

    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, TILE_SIZE, TILE_SIZE);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().expect("png header");
    w.write_image_data(&c.px).expect("png data");
    w.finish().expect("png finish");
    out
}
