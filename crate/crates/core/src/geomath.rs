//! Spherical-earth geodesy: points, great-circle distance, bounding boxes and
//! the local tangent plane the position solvers work in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Largest distance from the origin accepted by [`to_enu`] / [`from_enu`].
pub const MAX_PROJECTION_RANGE_M: f64 = 100_000.0;

/// A WGS84 position in degrees.
///
/// Latitude lies in `[-90, 90]`, longitude in `(-180, 180]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Builds a point, normalizing longitude into `(-180, 180]`.
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidCoordinate { lat, lon });
        }
        Ok(GeoPoint {
            lat,
            lon: normalize_lon(lon),
        })
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && self.lon > -180.0
            && self.lon <= 180.0
    }
}

/// Wraps a longitude into `(-180, 180]`.
pub fn normalize_lon(lon: f64) -> f64 {
    if lon > -180.0 && lon <= 180.0 {
        return lon;
    }
    let mut l = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if l == -180.0 {
        l = 180.0;
    }
    l
}

/// A point on the local tangent plane, meters east/north of some origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnuPoint {
    pub east: f64,
    pub north: f64,
}

impl EnuPoint {
    pub const ORIGIN: EnuPoint = EnuPoint {
        east: 0.0,
        north: 0.0,
    };

    pub fn new(east: f64, north: f64) -> Self {
        EnuPoint { east, north }
    }

    pub fn norm(&self) -> f64 {
        self.east.hypot(self.north)
    }

    pub fn distance(&self, other: &EnuPoint) -> f64 {
        (self.east - other.east).hypot(self.north - other.north)
    }
}

/// Latitude/longitude box. `west > east` means the box wraps the antimeridian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub south: f64,
    pub west: f64,
    pub north: f64,
    pub east: f64,
}

impl BoundingBox {
    pub fn wraps_antimeridian(&self) -> bool {
        self.west > self.east
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        if p.lat < self.south || p.lat > self.north {
            return false;
        }
        if self.wraps_antimeridian() {
            p.lon >= self.west || p.lon <= self.east
        } else {
            p.lon >= self.west && p.lon <= self.east
        }
    }

    /// Smallest box that contains every point of the closed spherical cap
    /// of `radius` meters around `center`.
    pub fn around(center: &GeoPoint, radius: f64) -> BoundingBox {
        let ang = radius / EARTH_RADIUS_M;
        let lat = center.lat.to_radians();
        let south = (lat - ang).to_degrees().max(-90.0);
        let north = (lat + ang).to_degrees().min(90.0);
        // The cap reaches a pole: every longitude is covered.
        if lat + ang >= std::f64::consts::FRAC_PI_2 || lat - ang <= -std::f64::consts::FRAC_PI_2 {
            return BoundingBox {
                south,
                west: -180.0,
                north,
                east: 180.0,
            };
        }
        let ratio = ang.sin() / lat.cos();
        if ratio >= 1.0 {
            return BoundingBox {
                south,
                west: -180.0,
                north,
                east: 180.0,
            };
        }
        let dlon = ratio.asin().to_degrees();
        if dlon >= 180.0 {
            return BoundingBox {
                south,
                west: -180.0,
                north,
                east: 180.0,
            };
        }
        BoundingBox {
            south,
            west: normalize_lon(center.lon - dlon),
            north,
            east: normalize_lon(center.lon + dlon),
        }
    }
}

/// Great-circle distance in meters.
pub fn haversine(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Equirectangular projection of `p` onto the tangent plane at `origin`.
///
/// Longitude offsets are scaled by the cosine of the mean latitude of the two
/// points; north is exact meridian arc, so the inverse stays closed-form.
pub fn to_enu(origin: &GeoPoint, p: &GeoPoint) -> Result<EnuPoint> {
    let d = haversine(origin, p);
    if d >= MAX_PROJECTION_RANGE_M {
        return Err(Error::OutOfProjectionRange { meters: d });
    }
    let dlon = normalize_lon(p.lon - origin.lon).to_radians();
    let dlat = (p.lat - origin.lat).to_radians();
    let mid = 0.5 * (origin.lat + p.lat).to_radians();
    Ok(EnuPoint {
        east: EARTH_RADIUS_M * dlon * mid.cos(),
        north: EARTH_RADIUS_M * dlat,
    })
}

/// Inverse of [`to_enu`].
pub fn from_enu(origin: &GeoPoint, e: &EnuPoint) -> Result<GeoPoint> {
    let n = e.norm();
    if !n.is_finite() || n >= MAX_PROJECTION_RANGE_M {
        return Err(Error::OutOfProjectionRange { meters: n });
    }
    let lat = origin.lat + (e.north / EARTH_RADIUS_M).to_degrees();
    let coslat = (0.5 * (origin.lat + lat)).to_radians().cos();
    let lon = origin.lon + (e.east / (EARTH_RADIUS_M * coslat)).to_degrees();
    if !(-90.0..=90.0).contains(&lat) || !lon.is_finite() {
        return Err(Error::OutOfProjectionRange { meters: n });
    }
    Ok(GeoPoint {
        lat,
        lon: normalize_lon(lon),
    })
}
