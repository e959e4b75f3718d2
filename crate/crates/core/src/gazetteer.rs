//! "City, Country" lookup table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SeedParseError};
use crate::geomath::{haversine, GeoPoint};

/// Built-in table used when no gazetteer file is configured.
pub const DEFAULT_GAZETTEER: &str = include_str!("../data/gazetteer.tsv");

/// A fix counts as "in" a city when within this distance of its centroid.
pub const REVERSE_GEOCODE_RADIUS_M: f64 = 50_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazetteerEntry {
    pub city: String,
    pub country: String,
    pub position: GeoPoint,
}

#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
}

fn norm(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Splits `"City, Country"` into its two trimmed parts.
pub fn split_query(query: &str) -> Result<(&str, &str)> {
    let mut parts = query.split(',');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(city), Some(country), None) if !city.trim().is_empty() && !country.trim().is_empty() => {
            Ok((city.trim(), country.trim()))
        }
        _ => Err(Error::MalformedQuery),
    }
}

impl Gazetteer {
    /// Parses `city<TAB>country<TAB>lat<TAB>lon` lines. Later duplicates of a
    /// (city, country) pair are rejected.
    pub fn parse(text: &str) -> std::result::Result<Self, SeedParseError> {
        let mut entries: Vec<GazetteerEntry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| SeedParseError { line: i + 1, reason };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(err(format!("expected 4 columns, got {}", cols.len())));
            }
            let lat: f64 = cols[2].trim().parse().map_err(|_| err("bad latitude".into()))?;
            let lon: f64 = cols[3].trim().parse().map_err(|_| err("bad longitude".into()))?;
            let entry = GazetteerEntry {
                city: cols[0].trim().to_string(),
                country: cols[1].trim().to_string(),
                position: GeoPoint::new(lat, lon).map_err(|e| err(e.to_string()))?,
            };
            if entries
                .iter()
                .any(|e| norm(&e.city) == norm(&entry.city) && norm(&e.country) == norm(&entry.country))
            {
                return Err(err(format!("duplicate entry {}, {}", entry.city, entry.country)));
            }
            entries.push(entry);
        }
        Ok(Gazetteer { entries })
    }

    pub fn builtin() -> Self {
        Gazetteer::parse(DEFAULT_GAZETTEER).expect("built-in gazetteer parses")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn geocode(&self, query: &str) -> Result<&GazetteerEntry> {
        let (city, country) = split_query(query)?;
        let (city, country) = (norm(city), norm(country));
        self.entries
            .iter()
            .find(|e| norm(&e.city) == city && norm(&e.country) == country)
            .ok_or_else(|| Error::UnknownCity(query.trim().to_string()))
    }

    /// Accepts `"City, Country"` or a bare city name (first match wins).
    pub fn resolve(&self, name: &str) -> Result<&GazetteerEntry> {
        if name.contains(',') {
            return self.geocode(name);
        }
        let city = norm(name);
        if city.is_empty() {
            return Err(Error::MalformedQuery);
        }
        self.entries
            .iter()
            .find(|e| norm(&e.city) == city)
            .ok_or_else(|| Error::UnknownCity(name.trim().to_string()))
    }

    /// Nearest city centroid within [`REVERSE_GEOCODE_RADIUS_M`].
    pub fn reverse(&self, p: &GeoPoint) -> Option<&GazetteerEntry> {
        self.entries
            .iter()
            .map(|e| (haversine(p, &e.position), e))
            .filter(|(d, _)| *d <= REVERSE_GEOCODE_RADIUS_M)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, e)| e)
    }
}
