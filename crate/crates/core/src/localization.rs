//! Position fixes from beacon measurements.
//!
//! Three estimators are provided: range trilateration, time-difference-of-arrival
//! multilateration and single-beacon proximity. The two least-squares
//! estimators run a damped Gauss-Newton (Levenberg) iteration on a local
//! tangent plane centered at the beacon centroid; [`solve_ranges`] and
//! [`solve_tdoa`] expose that planar kernel directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomath::{self, EnuPoint, GeoPoint};

/// Propagation speed used to turn arrival-time differences into meters.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Beacons closer to the best-fit line than this (meters) count as collinear.
pub const COLLINEARITY_TOLERANCE_M: f64 = 1.0;

const DISTINCT_TOLERANCE_M: f64 = 1e-3;
const MAX_ITERATIONS: usize = 100;
const STEP_TOLERANCE_M: f64 = 1e-8;
const INITIAL_DAMPING: f64 = 1e-3;
const AMBIGUITY_COST_RATIO: f64 = 0.05;
// Absolute slack on the ambiguity comparison, in normalized cost units, so
// that two exact (zero-cost) solutions compare as equal.
const AMBIGUITY_COST_EPSILON: f64 = 1e-9;
const MINIMA_MERGE_M: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BeaconKind {
    GpsPseudo,
    CellTower,
    WifiAp,
    BluetoothNode,
}

impl BeaconKind {
    /// Smallest accuracy radius a multi-beacon fix may claim for this kind.
    pub fn accuracy_floor(self) -> f64 {
        match self {
            BeaconKind::GpsPseudo => 10.0,
            BeaconKind::WifiAp => 30.0,
            BeaconKind::CellTower => 500.0,
            BeaconKind::BluetoothNode => 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beacon {
    pub id: String,
    pub position: GeoPoint,
    pub kind: BeaconKind,
    /// Coverage radius in meters.
    pub range_radius: f64,
}

impl Beacon {
    fn validate(&self) -> Result<()> {
        if !self.position.is_valid() {
            return Err(Error::InvalidCoordinate {
                lat: self.position.lat,
                lon: self.position.lon,
            });
        }
        if !(self.range_radius > 0.0 && self.range_radius.is_finite()) {
            return Err(Error::InvalidMeasurement(format!(
                "beacon {} has non-positive range radius",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeMeasurement {
    pub beacon: Beacon,
    pub range: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdoaMeasurement {
    pub reference: Beacon,
    pub beacon: Beacon,
    /// Arrival time at `beacon` minus arrival time at `reference`, seconds.
    pub delta_t: f64,
    pub sigma_t: f64,
}

/// Ordering is the tie-break preference used by [`best_fix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    Trilateration,
    Tdoa,
    Proximity,
    /// A position reported directly by the client.
    Gps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fix {
    pub position: GeoPoint,
    /// One-sigma accuracy radius, meters.
    pub accuracy: f64,
    pub method: Method,
    pub residual_rms: f64,
    /// Epoch milliseconds.
    pub timestamp: i64,
}

/// Tangent plane used by the solvers: centered on the mean beacon position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverFrame {
    pub origin: GeoPoint,
}

impl SolverFrame {
    pub fn for_points(points: &[GeoPoint]) -> SolverFrame {
        let first = points[0];
        let n = points.len() as f64;
        let lat = points.iter().map(|p| p.lat).sum::<f64>() / n;
        // Average longitudes relative to the first point so the antimeridian
        // does not split the centroid.
        let dlon = points
            .iter()
            .map(|p| geomath::normalize_lon(p.lon - first.lon))
            .sum::<f64>()
            / n;
        SolverFrame {
            origin: GeoPoint {
                lat,
                lon: geomath::normalize_lon(first.lon + dlon),
            },
        }
    }

    pub fn project(&self, p: &GeoPoint) -> Result<EnuPoint> {
        geomath::to_enu(&self.origin, p)
    }

    pub fn unproject(&self, e: &EnuPoint) -> Result<GeoPoint> {
        geomath::from_enu(&self.origin, e)
    }
}

/// Result of a planar least-squares solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarSolution {
    pub point: EnuPoint,
    /// Sum of squared normalized residuals at `point`.
    pub cost: f64,
    /// RMS of the residuals in meters.
    pub residual_rms: f64,
    /// `sqrt(trace((JᵀJ)⁻¹))` of the unweighted Jacobian at `point`.
    pub gdop: f64,
    pub iterations: usize,
}

/// A planar range observation: anchor, measured distance and noise scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarRange {
    pub anchor: EnuPoint,
    pub range: f64,
    pub sigma: f64,
}

/// A planar range-difference observation against a shared reference anchor:
/// `‖p − anchor‖ − ‖p − reference‖ ≈ difference`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarRangeDifference {
    pub anchor: EnuPoint,
    pub difference: f64,
    pub sigma: f64,
}

/// Least-squares residual model over a 2D unknown.
trait Residuals {
    /// Fills normalized residuals and their gradients at `p`.
    fn evaluate(&self, p: EnuPoint, residuals: &mut Vec<f64>, jacobian: &mut Vec<[f64; 2]>);
    /// Residuals in meters and their unweighted gradients.
    fn evaluate_metric(&self, p: EnuPoint, residuals: &mut Vec<f64>, jacobian: &mut Vec<[f64; 2]>);
}

struct RangeModel<'a>(&'a [PlanarRange]);

fn unit_from(anchor: EnuPoint, p: EnuPoint) -> (f64, [f64; 2]) {
    let (dx, dy) = (p.east - anchor.east, p.north - anchor.north);
    let d = dx.hypot(dy);
    if d < 1e-12 {
        (d, [0.0, 0.0])
    } else {
        (d, [dx / d, dy / d])
    }
}

impl Residuals for RangeModel<'_> {
    fn evaluate(&self, p: EnuPoint, r: &mut Vec<f64>, j: &mut Vec<[f64; 2]>) {
        r.clear();
        j.clear();
        for m in self.0 {
            let (d, u) = unit_from(m.anchor, p);
            r.push((d - m.range) / m.sigma);
            j.push([u[0] / m.sigma, u[1] / m.sigma]);
        }
    }

    fn evaluate_metric(&self, p: EnuPoint, r: &mut Vec<f64>, j: &mut Vec<[f64; 2]>) {
        r.clear();
        j.clear();
        for m in self.0 {
            let (d, u) = unit_from(m.anchor, p);
            r.push(d - m.range);
            j.push(u);
        }
    }
}

struct TdoaModel<'a> {
    reference: EnuPoint,
    observations: &'a [PlanarRangeDifference],
}

impl Residuals for TdoaModel<'_> {
    fn evaluate(&self, p: EnuPoint, r: &mut Vec<f64>, j: &mut Vec<[f64; 2]>) {
        r.clear();
        j.clear();
        let (d0, u0) = unit_from(self.reference, p);
        for m in self.observations {
            let (d, u) = unit_from(m.anchor, p);
            r.push((d - d0 - m.difference) / m.sigma);
            j.push([(u[0] - u0[0]) / m.sigma, (u[1] - u0[1]) / m.sigma]);
        }
    }

    fn evaluate_metric(&self, p: EnuPoint, r: &mut Vec<f64>, j: &mut Vec<[f64; 2]>) {
        r.clear();
        j.clear();
        let (d0, u0) = unit_from(self.reference, p);
        for m in self.observations {
            let (d, u) = unit_from(m.anchor, p);
            r.push(d - d0 - m.difference);
            j.push([u[0] - u0[0], u[1] - u0[1]]);
        }
    }
}

fn sum_squares(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn normal_equations(r: &[f64], j: &[[f64; 2]]) -> ([[f64; 2]; 2], [f64; 2]) {
    let mut a = [[0.0; 2]; 2];
    let mut g = [0.0; 2];
    for (ri, ji) in r.iter().zip(j) {
        a[0][0] += ji[0] * ji[0];
        a[0][1] += ji[0] * ji[1];
        a[1][1] += ji[1] * ji[1];
        g[0] += ji[0] * ri;
        g[1] += ji[1] * ri;
    }
    a[1][0] = a[0][1];
    (a, g)
}

fn solve2(a: [[f64; 2]; 2], b: [f64; 2]) -> Option<[f64; 2]> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.abs() < f64::MIN_POSITIVE || !det.is_finite() {
        return None;
    }
    Some([
        (a[1][1] * b[0] - a[0][1] * b[1]) / det,
        (a[0][0] * b[1] - a[1][0] * b[0]) / det,
    ])
}

/// Levenberg-damped Gauss-Newton from `start`.
fn minimize(model: &dyn Residuals, start: EnuPoint) -> Result<(EnuPoint, f64, usize)> {
    let (mut r, mut j) = (Vec::new(), Vec::new());
    let mut p = start;
    model.evaluate(p, &mut r, &mut j);
    let mut cost = sum_squares(&r);
    let mut lambda = INITIAL_DAMPING;

    for iteration in 1..=MAX_ITERATIONS {
        if cost == 0.0 {
            return Ok((p, cost, iteration - 1));
        }
        let (mut a, g) = normal_equations(&r, &j);
        a[0][0] += lambda;
        a[1][1] += lambda;
        let Some(step) = solve2(a, [-g[0], -g[1]]) else {
            return Err(Error::DegenerateGeometry("singular normal equations".into()));
        };
        let step_norm = step[0].hypot(step[1]);
        if step_norm < STEP_TOLERANCE_M {
            return Ok((p, cost, iteration));
        }
        let candidate = EnuPoint::new(p.east + step[0], p.north + step[1]);
        let (mut rc, mut jc) = (Vec::new(), Vec::new());
        model.evaluate(candidate, &mut rc, &mut jc);
        let candidate_cost = sum_squares(&rc);
        if candidate_cost <= cost {
            p = candidate;
            cost = candidate_cost;
            r = rc;
            j = jc;
            lambda = (lambda / 10.0).max(1e-12);
        } else {
            lambda *= 10.0;
        }
    }
    Err(Error::NoConvergence(MAX_ITERATIONS))
}

fn dilution(model: &dyn Residuals, p: EnuPoint) -> (f64, f64) {
    let (mut r, mut j) = (Vec::new(), Vec::new());
    model.evaluate_metric(p, &mut r, &mut j);
    let rms = (sum_squares(&r) / r.len() as f64).sqrt();
    let (a, _) = normal_equations(&r, &j);
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let gdop = if det > 0.0 {
        ((a[0][0] + a[1][1]) / det).sqrt()
    } else {
        f64::INFINITY
    };
    (rms, gdop)
}

/// Rejects coincident anchors and anchor sets that lie on one line.
pub fn check_geometry(points: &[EnuPoint]) -> Result<()> {
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            if a.distance(b) < DISTINCT_TOLERANCE_M {
                return Err(Error::DegenerateGeometry("coincident beacons".into()));
            }
        }
    }
    let n = points.len() as f64;
    let (mx, my) = (
        points.iter().map(|p| p.east).sum::<f64>() / n,
        points.iter().map(|p| p.north).sum::<f64>() / n,
    );
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.east - mx, p.north - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // Direction of the best-fit line is the principal eigenvector; its normal
    // is the other one.
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let normal = [-theta.sin(), theta.cos()];
    let spread = points
        .iter()
        .map(|p| ((p.east - mx) * normal[0] + (p.north - my) * normal[1]).abs())
        .fold(0.0, f64::max);
    if spread <= COLLINEARITY_TOLERANCE_M {
        return Err(Error::DegenerateGeometry("beacons are collinear".into()));
    }
    Ok(())
}

fn validate_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidMeasurement("noise scale must be positive".into()))
    }
}

/// Closed-form least squares on the range equations differenced against the
/// first one: `2(bᵢ − b₀)·p = ‖bᵢ‖² − ‖b₀‖² − rᵢ² + r₀²`.
fn linearized_range_solution(observations: &[PlanarRange]) -> Option<EnuPoint> {
    let b0 = observations[0];
    let mut a = [[0.0; 2]; 2];
    let mut rhs = [0.0; 2];
    for o in &observations[1..] {
        // Work relative to b0 to keep the squared terms small.
        let row = [
            2.0 * (o.anchor.east - b0.anchor.east),
            2.0 * (o.anchor.north - b0.anchor.north),
        ];
        let (ex, ny) = (o.anchor.east - b0.anchor.east, o.anchor.north - b0.anchor.north);
        let y = ex * ex + ny * ny - o.range * o.range + b0.range * b0.range;
        a[0][0] += row[0] * row[0];
        a[0][1] += row[0] * row[1];
        a[1][1] += row[1] * row[1];
        rhs[0] += row[0] * y;
        rhs[1] += row[1] * y;
    }
    a[1][0] = a[0][1];
    let rel = solve2(a, rhs)?;
    let p = EnuPoint::new(b0.anchor.east + rel[0], b0.anchor.north + rel[1]);
    (p.east.is_finite() && p.north.is_finite()).then_some(p)
}

/// Planar range trilateration.
pub fn solve_ranges(observations: &[PlanarRange]) -> Result<PlanarSolution> {
    if observations.len() < 3 {
        return Err(Error::InsufficientBeacons {
            needed: 3,
            got: observations.len(),
        });
    }
    for o in observations {
        validate_sigma(o.sigma)?;
        if !(o.range >= 0.0 && o.range.is_finite()) {
            return Err(Error::InvalidMeasurement("range must be finite and ≥ 0".into()));
        }
    }
    let anchors: Vec<EnuPoint> = observations.iter().map(|o| o.anchor).collect();
    check_geometry(&anchors)?;

    // Weighted centroid, weights 1/r with r clipped below at 1 m.
    let (mut wx, mut wy, mut wsum) = (0.0, 0.0, 0.0);
    for o in observations {
        let w = 1.0 / o.range.max(1.0);
        wx += w * o.anchor.east;
        wy += w * o.anchor.north;
        wsum += w;
    }
    let mut starts = vec![EnuPoint::new(wx / wsum, wy / wsum)];
    // The centroid can sit in the basin of a mirror minimum when the target
    // is outside the anchor hull; the linearized solution cannot.
    if let Some(p) = linearized_range_solution(observations) {
        starts.push(p);
    }

    let model = RangeModel(observations);
    let mut best: Option<(EnuPoint, f64, usize)> = None;
    let mut first_err = None;
    for start in starts {
        match minimize(&model, start) {
            Ok(found) if best.is_none_or(|b| found.1 < b.1) => best = Some(found),
            Ok(_) => {}
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let (point, cost, iterations) = match (best, first_err) {
        (Some(b), _) => b,
        (None, Some(e)) => return Err(e),
        (None, None) => unreachable!("at least one start"),
    };
    let (residual_rms, gdop) = dilution(&model, point);
    Ok(PlanarSolution {
        point,
        cost,
        residual_rms,
        gdop,
        iterations,
    })
}

/// Planar range-difference multilateration with multi-start search.
///
/// Starts from a 3×3 grid of seeds over the anchor bounding box and keeps
/// every converged local minimum. `ambiguity_radius` decides when two
/// near-equal minima are far enough apart to make the answer ambiguous.
pub fn solve_tdoa(
    reference: EnuPoint,
    observations: &[PlanarRangeDifference],
    ambiguity_radius: f64,
) -> Result<PlanarSolution> {
    if observations.len() < 2 {
        return Err(Error::InsufficientBeacons {
            needed: 3,
            got: observations.len() + 1,
        });
    }
    for o in observations {
        validate_sigma(o.sigma)?;
        if !o.difference.is_finite() {
            return Err(Error::InvalidMeasurement("range difference must be finite".into()));
        }
    }
    let mut anchors = vec![reference];
    anchors.extend(observations.iter().map(|o| o.anchor));
    check_geometry(&anchors)?;

    let model = TdoaModel {
        reference,
        observations,
    };
    let (min_e, max_e) = anchors
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.east), hi.max(p.east)));
    let (min_n, max_n) = anchors
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.north), hi.max(p.north)));

    // Seeds at the centers of a 3×3 partition of the bounding box, which keeps
    // them off the anchors at the box corners.
    let fractions = [1.0 / 6.0, 0.5, 5.0 / 6.0];
    let mut minima: Vec<(EnuPoint, f64, usize)> = Vec::new();
    let mut last_err = None;
    for fy in fractions {
        for fx in fractions {
            let seed = EnuPoint::new(min_e + fx * (max_e - min_e), min_n + fy * (max_n - min_n));
            match minimize(&model, seed) {
                Ok(found) => {
                    if !minima.iter().any(|m| m.0.distance(&found.0) < MINIMA_MERGE_M) {
                        minima.push(found);
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
    }
    if minima.is_empty() {
        return Err(last_err.unwrap_or(Error::NoConvergence(MAX_ITERATIONS)));
    }
    minima.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (point, cost, iterations) = minima[0];
    let (residual_rms, gdop) = dilution(&model, point);

    let rival = minima[1..].iter().any(|(p, c, _)| {
        *c <= cost * (1.0 + AMBIGUITY_COST_RATIO) + AMBIGUITY_COST_EPSILON
            && p.distance(&point) > 2.0 * ambiguity_radius
    });
    if rival {
        return Err(Error::AmbiguousSolution);
    }
    Ok(PlanarSolution {
        point,
        cost,
        residual_rms,
        gdop,
        iterations,
    })
}

fn floor_for<'a>(kinds: impl Iterator<Item = &'a BeaconKind>) -> f64 {
    kinds.map(|k| k.accuracy_floor()).fold(0.0, f64::max)
}

fn accuracy_model(floor: f64, residual_rms: f64, gdop: f64) -> Result<f64> {
    if !gdop.is_finite() {
        return Err(Error::DegenerateGeometry("singular geometry at solution".into()));
    }
    Ok(floor.max(residual_rms * gdop))
}

/// Range trilateration: the position minimizing the σ-weighted squared
/// range residuals.
pub fn trilaterate(measurements: &[RangeMeasurement], timestamp: i64) -> Result<Fix> {
    if measurements.len() < 3 {
        return Err(Error::InsufficientBeacons {
            needed: 3,
            got: measurements.len(),
        });
    }
    for m in measurements {
        m.beacon.validate()?;
    }
    let positions: Vec<GeoPoint> = measurements.iter().map(|m| m.beacon.position).collect();
    let frame = SolverFrame::for_points(&positions);
    let observations = measurements
        .iter()
        .map(|m| {
            Ok(PlanarRange {
                anchor: frame.project(&m.beacon.position)?,
                range: m.range,
                sigma: m.sigma,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let solution = solve_ranges(&observations)?;
    let floor = floor_for(measurements.iter().map(|m| &m.beacon.kind));
    Ok(Fix {
        position: frame.unproject(&solution.point)?,
        accuracy: accuracy_model(floor, solution.residual_rms, solution.gdop)?,
        method: Method::Trilateration,
        residual_rms: solution.residual_rms,
        timestamp,
    })
}

/// TDOA multilateration against a single shared reference beacon.
pub fn multilaterate_tdoa(measurements: &[TdoaMeasurement], timestamp: i64) -> Result<Fix> {
    if measurements.len() < 2 {
        return Err(Error::InsufficientBeacons {
            needed: 3,
            got: measurements.len() + 1,
        });
    }
    let reference = &measurements[0].reference;
    reference.validate()?;
    let mut seen = vec![reference.id.as_str()];
    for m in measurements {
        m.beacon.validate()?;
        if m.reference.id != reference.id || m.reference.position != reference.position {
            return Err(Error::InvalidMeasurement(
                "all TDOA measurements must share one reference beacon".into(),
            ));
        }
        if seen.contains(&m.beacon.id.as_str()) {
            return Err(Error::InvalidMeasurement(format!(
                "beacon {} appears more than once",
                m.beacon.id
            )));
        }
        seen.push(&m.beacon.id);
        validate_sigma(m.sigma_t)?;
        let baseline = geomath::haversine(&reference.position, &m.beacon.position);
        let slack = 1.0 + 3.0 * SPEED_OF_LIGHT * m.sigma_t;
        if m.delta_t.abs() * SPEED_OF_LIGHT > baseline + slack {
            return Err(Error::InvalidMeasurement(format!(
                "time difference for {} exceeds the beacon baseline",
                m.beacon.id
            )));
        }
    }

    let mut positions = vec![reference.position];
    positions.extend(measurements.iter().map(|m| m.beacon.position));
    let frame = SolverFrame::for_points(&positions);
    let reference_enu = frame.project(&reference.position)?;
    let observations = measurements
        .iter()
        .map(|m| {
            Ok(PlanarRangeDifference {
                anchor: frame.project(&m.beacon.position)?,
                difference: SPEED_OF_LIGHT * m.delta_t,
                sigma: SPEED_OF_LIGHT * m.sigma_t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let floor = floor_for(
        std::iter::once(&reference.kind).chain(measurements.iter().map(|m| &m.beacon.kind)),
    );
    // Ambiguity is judged against the accuracy floor; the final accuracy is
    // never smaller than it.
    let solution = solve_tdoa(reference_enu, &observations, floor)?;
    Ok(Fix {
        position: frame.unproject(&solution.point)?,
        accuracy: accuracy_model(floor, solution.residual_rms, solution.gdop)?,
        method: Method::Tdoa,
        residual_rms: solution.residual_rms,
        timestamp,
    })
}

/// Single-beacon fix: the beacon position, with its coverage radius as accuracy.
pub fn proximity_fix(beacon: &Beacon, timestamp: i64) -> Result<Fix> {
    beacon.validate()?;
    Ok(Fix {
        position: beacon.position,
        accuracy: beacon.range_radius,
        method: Method::Proximity,
        residual_rms: 0.0,
        timestamp,
    })
}

/// Picks the most accurate fix; ties go to the newest, then by method.
pub fn best_fix(available: &[Fix]) -> Result<Fix> {
    available
        .iter()
        .min_by(|a, b| {
            a.accuracy
                .total_cmp(&b.accuracy)
                .then(b.timestamp.cmp(&a.timestamp))
                .then(a.method.cmp(&b.method))
        })
        .copied()
        .ok_or(Error::EmptyInput)
}
