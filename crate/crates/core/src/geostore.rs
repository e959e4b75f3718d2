//! Location database: current user fixes and static points of interest,
//! bucketed by geohash cell.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SeedParseError};
use crate::geomath::{haversine, BoundingBox, GeoPoint, EARTH_RADIUS_M};
use crate::localization::Fix;
use crate::UserId;

pub const DEFAULT_PRECISION: usize = 6;
pub const MAX_QUERY_RADIUS_M: f64 = 50_000.0;

const BASE32: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

/// Geohash cell identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey(pub String);

/// Integer addressing of geohash cells at a fixed precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellGrid {
    precision: usize,
    lat_bits: u32,
    lon_bits: u32,
}

impl CellGrid {
    pub fn new(precision: usize) -> CellGrid {
        assert!((1..=12).contains(&precision), "geohash precision must be 1..=12");
        let bits = 5 * precision as u32;
        CellGrid {
            precision,
            lat_bits: bits / 2,
            lon_bits: bits - bits / 2,
        }
    }

    pub fn precision(&self) -> usize {
        self.precision
    }

    fn lat_cells(&self) -> u64 {
        1 << self.lat_bits
    }

    fn lon_cells(&self) -> u64 {
        1 << self.lon_bits
    }

    /// Cell height and width in degrees.
    pub fn cell_size(&self) -> (f64, f64) {
        (180.0 / self.lat_cells() as f64, 360.0 / self.lon_cells() as f64)
    }

    fn lat_index(&self, lat: f64) -> u64 {
        let i = ((lat + 90.0) / 180.0 * self.lat_cells() as f64).floor();
        (i.max(0.0) as u64).min(self.lat_cells() - 1)
    }

    fn lon_index(&self, lon: f64) -> u64 {
        let i = ((lon + 180.0) / 360.0 * self.lon_cells() as f64).floor();
        (i.max(0.0) as u64).min(self.lon_cells() - 1)
    }

    pub fn index_of(&self, p: &GeoPoint) -> (u64, u64) {
        (self.lat_index(p.lat), self.lon_index(p.lon))
    }

    pub fn key(&self, lat_i: u64, lon_i: u64) -> CellKey {
        let total = 5 * self.precision as u32;
        let (mut lat_left, mut lon_left) = (self.lat_bits, self.lon_bits);
        let mut out = String::with_capacity(self.precision);
        let mut acc = 0usize;
        for b in 0..total {
            let bit = if b % 2 == 0 {
                lon_left -= 1;
                (lon_i >> lon_left) & 1
            } else {
                lat_left -= 1;
                (lat_i >> lat_left) & 1
            };
            acc = (acc << 1) | bit as usize;
            if b % 5 == 4 {
                out.push(BASE32[acc] as char);
                acc = 0;
            }
        }
        CellKey(out)
    }

    pub fn key_of(&self, p: &GeoPoint) -> CellKey {
        let (a, b) = self.index_of(p);
        self.key(a, b)
    }

    pub fn decode(&self, key: &CellKey) -> Option<(u64, u64)> {
        if key.0.len() != self.precision {
            return None;
        }
        let (mut lat_i, mut lon_i) = (0u64, 0u64);
        let mut b = 0;
        for c in key.0.bytes() {
            let v = BASE32.iter().position(|&x| x == c)?;
            for shift in (0..5).rev() {
                let bit = ((v >> shift) & 1) as u64;
                if b % 2 == 0 {
                    lon_i = (lon_i << 1) | bit;
                } else {
                    lat_i = (lat_i << 1) | bit;
                }
                b += 1;
            }
        }
        Some((lat_i, lon_i))
    }

    /// Index ranges (inclusive) of every cell touching `bbox`.
    fn covering(&self, bbox: &BoundingBox) -> (std::ops::RangeInclusive<u64>, Vec<std::ops::RangeInclusive<u64>>) {
        let lat = self.lat_index(bbox.south)..=self.lat_index(bbox.north);
        let lon = if bbox.wraps_antimeridian() {
            vec![
                self.lon_index(bbox.west)..=self.lon_cells() - 1,
                0..=self.lon_index(bbox.east),
            ]
        } else {
            vec![self.lon_index(bbox.west)..=self.lon_index(bbox.east)]
        };
        (lat, lon)
    }
}

/// Generic cell-bucketed point set.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellIndex<K: Ord> {
    cells: BTreeMap<CellKey, BTreeSet<K>>,
    placement: BTreeMap<K, CellKey>,
}

impl<K: Ord + Clone> Default for CellIndex<K> {
    fn default() -> Self {
        CellIndex::new()
    }
}

impl<K: Ord + Clone> CellIndex<K> {
    fn new() -> Self {
        CellIndex {
            cells: BTreeMap::new(),
            placement: BTreeMap::new(),
        }
    }

    fn place(&mut self, id: &K, cell: CellKey) {
        if let Some(old) = self.placement.get(id) {
            if *old == cell {
                return;
            }
            self.unplace(id);
        }
        self.cells.entry(cell.clone()).or_default().insert(id.clone());
        self.placement.insert(id.clone(), cell);
    }

    fn unplace(&mut self, id: &K) {
        if let Some(old) = self.placement.remove(id) {
            if let Some(set) = self.cells.get_mut(&old) {
                set.remove(id);
                if set.is_empty() {
                    self.cells.remove(&old);
                }
            }
        }
    }

    /// Ids bucketed in any cell touching `bbox`.
    fn candidates(&self, grid: &CellGrid, bbox: &BoundingBox) -> Vec<K> {
        let (lat, lons) = grid.covering(bbox);
        let span: u64 = lons.iter().map(|r| r.end() - r.start() + 1).sum::<u64>()
            * (lat.end() - lat.start() + 1);
        let mut out = Vec::new();
        if span as usize > self.cells.len() {
            for (key, ids) in &self.cells {
                let Some((a, b)) = grid.decode(key) else { continue };
                if lat.contains(&a) && lons.iter().any(|r| r.contains(&b)) {
                    out.extend(ids.iter().cloned());
                }
            }
        } else {
            for a in lat.clone() {
                for r in &lons {
                    for b in r.clone() {
                        if let Some(ids) = self.cells.get(&grid.key(a, b)) {
                            out.extend(ids.iter().cloned());
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceRecord {
    pub user_id: UserId,
    pub fix: Fix,
    pub online: bool,
    pub updated_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PoiCategory {
    Restaurant,
    Hospital,
    Bank,
    Other,
}

impl std::str::FromStr for PoiCategory {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "restaurant" => Ok(PoiCategory::Restaurant),
            "hospital" => Ok(PoiCategory::Hospital),
            "bank" => Ok(PoiCategory::Bank),
            "other" => Ok(PoiCategory::Other),
            other => Err(format!("unknown POI category {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub poi_id: String,
    pub name: String,
    pub category: PoiCategory,
    pub position: GeoPoint,
}

/// POI search filter. Both parts are optional; set parts must all match.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoiFilter {
    pub category: Option<PoiCategory>,
    pub name: Option<String>,
}

impl PoiFilter {
    pub fn matches(&self, poi: &Poi) -> bool {
        if let Some(c) = self.category {
            if poi.category != c {
                return false;
            }
        }
        if let Some(n) = &self.name {
            if !poi.name.to_lowercase().contains(&n.to_lowercase()) {
                return false;
            }
        }
        true
    }
}

/// Parses the tab-separated POI seed format: `poi_id, name, category, lat, lon`.
pub fn parse_poi_seed(text: &str) -> std::result::Result<Vec<Poi>, SeedParseError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| SeedParseError { line: n + 1, reason };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(err(format!("expected 5 columns, found {}", cols.len())));
        }
        let lat: f64 = cols[3].trim().parse().map_err(|_| err("bad latitude".into()))?;
        let lon: f64 = cols[4].trim().parse().map_err(|_| err("bad longitude".into()))?;
        out.push(Poi {
            poi_id: cols[0].trim().to_string(),
            name: cols[1].trim().to_string(),
            category: cols[2].parse().map_err(err)?,
            position: GeoPoint::new(lat, lon).map_err(|e| err(e.to_string()))?,
        });
    }
    Ok(out)
}

fn check_radius(radius: f64) -> Result<()> {
    if radius > 0.0 && radius <= MAX_QUERY_RADIUS_M {
        Ok(())
    } else {
        Err(Error::RadiusOutOfRange(radius))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeoStore {
    precision: usize,
    records: BTreeMap<UserId, PresenceRecord>,
    users: CellIndex<UserId>,
    // POIs are a static catalog loaded at startup, not part of saved state.
    #[serde(skip)]
    pois: BTreeMap<String, Poi>,
    #[serde(skip)]
    poi_index: CellIndex<String>,
}

impl Default for GeoStore {
    fn default() -> Self {
        GeoStore::new(DEFAULT_PRECISION)
    }
}

impl GeoStore {
    pub fn new(precision: usize) -> GeoStore {
        CellGrid::new(precision);
        GeoStore {
            precision,
            records: BTreeMap::new(),
            users: CellIndex::new(),
            pois: BTreeMap::new(),
            poi_index: CellIndex::new(),
        }
    }

    pub fn grid(&self) -> CellGrid {
        CellGrid::new(self.precision)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, user: UserId) -> Option<&PresenceRecord> {
        self.records.get(&user)
    }

    pub fn records(&self) -> impl Iterator<Item = &PresenceRecord> {
        self.records.values()
    }

    /// Stores a new fix for `user`, returning the one it replaces.
    pub fn upsert_position(&mut self, user: UserId, fix: Fix) -> Result<Option<Fix>> {
        if !fix.position.is_valid() {
            return Err(Error::InvalidCoordinate {
                lat: fix.position.lat,
                lon: fix.position.lon,
            });
        }
        if let Some(existing) = self.records.get(&user) {
            if fix.timestamp < existing.updated_at {
                return Err(Error::StaleUpdate);
            }
        }
        let cell = self.grid().key_of(&fix.position);
        let online = self.records.get(&user).is_some_and(|r| r.online);
        let previous = self.records.insert(
            user,
            PresenceRecord {
                user_id: user,
                fix,
                online,
                updated_at: fix.timestamp,
            },
        );
        self.users.place(&user, cell);
        Ok(previous.map(|r| r.fix))
    }

    pub fn remove(&mut self, user: UserId) -> Option<PresenceRecord> {
        self.users.unplace(&user);
        self.records.remove(&user)
    }

    pub fn set_online(&mut self, user: UserId, online: bool) {
        if let Some(r) = self.records.get_mut(&user) {
            r.online = online;
        }
    }

    /// Records within `radius` meters of `center` (closed ball), nearest first,
    /// ties by user id.
    pub fn query_radius(&self, center: &GeoPoint, radius: f64, online_only: bool) -> Result<Vec<PresenceRecord>> {
        check_radius(radius)?;
        let bbox = BoundingBox::around(center, radius);
        let mut hits: Vec<(f64, &PresenceRecord)> = self
            .users
            .candidates(&self.grid(), &bbox)
            .into_iter()
            .filter_map(|id| self.records.get(&id))
            .filter(|r| !online_only || r.online)
            .map(|r| (haversine(center, &r.fix.position), r))
            .filter(|(d, _)| *d <= radius)
            .collect();
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.user_id.cmp(&b.1.user_id)));
        Ok(hits.into_iter().map(|(_, r)| r.clone()).collect())
    }

    /// The `k` nearest records (ties by user id), found by widening rings of
    /// cells around the center cell.
    pub fn query_knn(&self, center: &GeoPoint, k: usize) -> Vec<PresenceRecord> {
        if k == 0 || self.records.is_empty() {
            return Vec::new();
        }
        let grid = self.grid();
        let (ci, cj) = grid.index_of(center);
        let (cell_h, cell_w) = grid.cell_size();
        let lat_cells = grid.lat_cells() as i64;
        let lon_cells = grid.lon_cells() as i64;
        let mut found: Vec<(f64, UserId)> = Vec::new();
        let lat0 = center.lat.to_radians();
        let mut ring: i64 = 0;
        loop {
            // Visit the cells at Chebyshev distance `ring` from the center cell.
            let (ci, cj) = (ci as i64, cj as i64);
            let mut visit = |a: i64, b: i64| {
                if a < 0 || a >= lat_cells {
                    return;
                }
                let b = b.rem_euclid(lon_cells);
                if let Some(ids) = self.users.cells.get(&grid.key(a as u64, b as u64)) {
                    for id in ids {
                        let r = &self.records[id];
                        found.push((haversine(center, &r.fix.position), *id));
                    }
                }
            };
            let lon_span = (2 * ring + 1).min(lon_cells);
            if ring == 0 {
                visit(ci, cj);
            } else {
                for db in -ring..=ring {
                    if 2 * ring + 1 > lon_cells && (db + ring) >= lon_cells {
                        break;
                    }
                    visit(ci - ring, cj + db);
                    visit(ci + ring, cj + db);
                }
                if 2 * ring + 1 <= lon_cells {
                    for da in -ring + 1..ring {
                        visit(ci + da, cj - ring);
                        visit(ci + da, cj + ring);
                    }
                }
            }

            let lat_done = ci - ring <= 0 && ci + ring >= lat_cells - 1;
            let lon_done = lon_span >= lon_cells;
            if lat_done && lon_done {
                break;
            }
            if found.len() >= k {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let kth = found[k - 1].0;
                // Lower bound on the distance to any point outside the visited block.
                let south_edge = -90.0 + (ci - ring).max(0) as f64 * cell_h;
                let north_edge = -90.0 + (ci + ring + 1).min(lat_cells) as f64 * cell_h;
                let lat_gap = |edge: f64, open: bool| {
                    if open {
                        EARTH_RADIUS_M * (center.lat - edge).abs().to_radians()
                    } else {
                        f64::INFINITY
                    }
                };
                let lat_bound = lat_gap(south_edge, ci - ring > 0).min(lat_gap(north_edge, ci + ring + 1 < lat_cells));
                let lon_bound = if lon_done {
                    f64::INFINITY
                } else {
                    let west_edge = -180.0 + (cj as f64 - ring as f64) * cell_w;
                    let east_edge = -180.0 + (cj as f64 + ring as f64 + 1.0) * cell_w;
                    let dlon = (center.lon - west_edge).min(east_edge - center.lon).to_radians();
                    if dlon >= std::f64::consts::FRAC_PI_2 {
                        EARTH_RADIUS_M * (std::f64::consts::FRAC_PI_2 - lat0.abs())
                    } else {
                        EARTH_RADIUS_M * (lat0.cos() * dlon.sin()).clamp(-1.0, 1.0).asin()
                    }
                };
                if kth < lat_bound.min(lon_bound) {
                    break;
                }
            }
            ring += 1;
            // Past this many rings a direct scan is cheaper and trivially exact.
            if ring > 64 {
                found = self
                    .records
                    .values()
                    .map(|r| (haversine(center, &r.fix.position), r.user_id))
                    .collect();
                break;
            }
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        found.dedup_by_key(|x| x.1);
        found.truncate(k);
        found.into_iter().map(|(_, id)| self.records[&id].clone()).collect()
    }

    pub fn insert_poi(&mut self, poi: Poi) {
        let cell = self.grid().key_of(&poi.position);
        self.poi_index.place(&poi.poi_id, cell);
        self.pois.insert(poi.poi_id.clone(), poi);
    }

    pub fn poi_count(&self) -> usize {
        self.pois.len()
    }

    pub fn search_poi(&self, center: &GeoPoint, radius: f64, filter: &PoiFilter) -> Result<Vec<Poi>> {
        check_radius(radius)?;
        let bbox = BoundingBox::around(center, radius);
        let mut hits: Vec<(f64, &Poi)> = self
            .poi_index
            .candidates(&self.grid(), &bbox)
            .into_iter()
            .filter_map(|id| self.pois.get(&id))
            .filter(|p| filter.matches(p))
            .map(|p| (haversine(center, &p.position), p))
            .filter(|(d, _)| *d <= radius)
            .collect();
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.poi_id.cmp(&b.1.poi_id)));
        Ok(hits.into_iter().map(|(_, p)| p.clone()).collect())
    }

    /// Checks that each user sits in exactly the cell its fix maps to.
    pub fn audit(&self) -> std::result::Result<(), String> {
        let grid = self.grid();
        let mut seen = BTreeSet::new();
        for (key, ids) in &self.users.cells {
            if ids.is_empty() {
                return Err(format!("empty cell {} retained", key.0));
            }
            for id in ids {
                if !seen.insert(*id) {
                    return Err(format!("user {id} appears in two cells"));
                }
                let rec = self.records.get(id).ok_or(format!("cell {} holds unknown user {id}", key.0))?;
                if grid.key_of(&rec.fix.position) != *key {
                    return Err(format!("user {id} filed under wrong cell"));
                }
            }
        }
        if seen.len() != self.records.len() {
            return Err("some records are not indexed".into());
        }
        Ok(())
    }
}
