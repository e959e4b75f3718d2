use std::time::Instant;

use lbsn_core::geomath::{from_enu, EnuPoint, GeoPoint};
use lbsn_core::localization::{
    check_geometry, multilaterate_tdoa, solve_ranges, solve_tdoa, trilaterate, Beacon, BeaconKind,
    PlanarRange, PlanarRangeDifference, RangeMeasurement, SolverFrame, TdoaMeasurement, SPEED_OF_LIGHT,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{ensure, Outcome};

const GRID_RESOLUTION_M: f64 = 0.01;

/// Minimum of `cost` over the box `[lo, hi]` on a 0.01 m lattice.
///
/// A full 0.01 m sweep of a kilometre-wide box is 10¹⁰ points, so the search
/// is hierarchical: a 200×200 sweep of the box, then around each of the best
/// few coarse points a 21×21 window whose step shrinks tenfold per level
/// until it reaches the lattice spacing.
fn grid_oracle(cost: &dyn Fn(f64, f64) -> f64, lo: EnuPoint, hi: EnuPoint) -> (EnuPoint, f64) {
    const COARSE: usize = 200;
    let (de, dn) = ((hi.east - lo.east) / COARSE as f64, (hi.north - lo.north) / COARSE as f64);
    let mut coarse = Vec::with_capacity((COARSE + 1) * (COARSE + 1));
    for i in 0..=COARSE {
        for k in 0..=COARSE {
            let (e, n) = (lo.east + i as f64 * de, lo.north + k as f64 * dn);
            coarse.push((cost(e, n), e, n));
        }
    }
    coarse.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = (EnuPoint::new(coarse[0].1, coarse[0].2), coarse[0].0);
    for &(_, e0, n0) in coarse.iter().take(6) {
        let (mut ce, mut cn) = (e0, n0);
        let mut h = de.max(dn);
        while h > GRID_RESOLUTION_M {
            h = (h / 10.0).max(GRID_RESOLUTION_M);
            let mut local = (f64::INFINITY, ce, cn);
            for i in -10..=10 {
                for k in -10..=10 {
                    let (e, n) = (ce + i as f64 * h, cn + k as f64 * h);
                    let c = cost(e, n);
                    if c < local.0 {
                        local = (c, e, n);
                    }
                }
            }
            (ce, cn) = (local.1, local.2);
            if local.0 < best.1 {
                best = (EnuPoint::new(ce, cn), local.0);
            }
        }
    }
    best
}

fn bbox(points: &[EnuPoint]) -> (EnuPoint, EnuPoint) {
    let lo = EnuPoint::new(
        points.iter().map(|p| p.east).fold(f64::INFINITY, f64::min),
        points.iter().map(|p| p.north).fold(f64::INFINITY, f64::min),
    );
    let hi = EnuPoint::new(
        points.iter().map(|p| p.east).fold(f64::NEG_INFINITY, f64::max),
        points.iter().map(|p| p.north).fold(f64::NEG_INFINITY, f64::max),
    );
    (lo, hi)
}

fn beacon(i: usize, kind: BeaconKind, position: GeoPoint) -> Beacon {
    Beacon {
        id: format!("b{i}"),
        position,
        kind,
        range_radius: 1000.0,
    }
}

fn random_origin(rng: &mut ChaCha8Rng) -> GeoPoint {
    GeoPoint::new(rng.random_range(-60.0..60.0), rng.random_range(-179.0..179.0)).unwrap()
}

/// Anchors scattered over a square; rejects degenerate layouts.
fn scattered(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<EnuPoint> {
    loop {
        let a: Vec<EnuPoint> = (0..n)
            .map(|_| EnuPoint::new(rng.random_range(-half..half), rng.random_range(-half..half)))
            .collect();
        if check_geometry(&a).is_ok() {
            return a;
        }
    }
}

/// Beacons and the target placed in geodetic coordinates, plus the same
/// points in the solver's own tangent frame.
struct Placed {
    geo: Vec<GeoPoint>,
    planar: Vec<EnuPoint>,
    truth_planar: EnuPoint,
    frame: SolverFrame,
}

fn place(origin: &GeoPoint, anchors: &[EnuPoint], truth: EnuPoint) -> Placed {
    let geo: Vec<GeoPoint> = anchors.iter().map(|a| from_enu(origin, a).unwrap()).collect();
    let frame = SolverFrame::for_points(&geo);
    let planar = geo.iter().map(|g| frame.project(g).unwrap()).collect();
    let truth_planar = frame.project(&from_enu(origin, &truth).unwrap()).unwrap();
    Placed {
        geo,
        planar,
        truth_planar,
        frame,
    }
}

fn planar_error(frame: &SolverFrame, fix: &GeoPoint, truth: &EnuPoint) -> f64 {
    frame.project(fix).unwrap().distance(truth)
}

pub fn oracle_suite() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x10CA7E);

    let mut tri_planar: f64 = 0.0;
    let mut tri_geo: f64 = 0.0;
    for trial in 0..1000 {
        let n = rng.random_range(3..=6);
        let anchors = scattered(&mut rng, n, 1000.0);
        let (lo, hi) = bbox(&anchors);
        let truth = EnuPoint::new(rng.random_range(lo.east..hi.east), rng.random_range(lo.north..hi.north));
        let sigmas: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
        let obs: Vec<PlanarRange> = anchors
            .iter()
            .zip(&sigmas)
            .map(|(a, s)| PlanarRange {
                anchor: *a,
                range: a.distance(&truth),
                sigma: *s,
            })
            .collect();
        let sol = solve_ranges(&obs).map_err(|e| format!("trilateration #{trial}: {e}"))?;
        tri_planar = tri_planar.max(sol.point.distance(&truth));
        let cost = |e: f64, nn: f64| {
            obs.iter()
                .map(|o| (((e - o.anchor.east).hypot(nn - o.anchor.north) - o.range) / o.sigma).powi(2))
                .sum::<f64>()
        };
        let (_, grid_cost) = grid_oracle(&cost, lo, hi);
        ensure!(
            sol.cost <= grid_cost + 1e-12,
            "trilateration #{trial}: solver cost {} above grid cost {grid_cost}",
            sol.cost
        );

        // The same instance through the geodetic entry point.
        let origin = random_origin(&mut rng);
        let placed = place(&origin, &anchors, truth);
        let measurements: Vec<RangeMeasurement> = placed
            .geo
            .iter()
            .zip(&placed.planar)
            .zip(&sigmas)
            .enumerate()
            .map(|(i, ((g, p), s))| RangeMeasurement {
                beacon: beacon(i, BeaconKind::WifiAp, *g),
                range: p.distance(&placed.truth_planar),
                sigma: *s,
            })
            .collect();
        let fix = trilaterate(&measurements, 0).map_err(|e| format!("geodetic trilateration #{trial}: {e}"))?;
        tri_geo = tri_geo.max(planar_error(&placed.frame, &fix.position, &placed.truth_planar));
    }
    ensure!(tri_planar < 1e-4, "trilateration max error {tri_planar:e} m");
    ensure!(tri_geo < 1e-4, "geodetic trilateration max error {tri_geo:e} m");

    let mut tdoa_planar: f64 = 0.0;
    let mut tdoa_geo: f64 = 0.0;
    for trial in 0..500 {
        // A convex polygon of 4–5 anchors and a target inside it.
        let n = rng.random_range(4..=5);
        let anchors = loop {
            let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            angles.sort_by(f64::total_cmp);
            let wrap = angles[0] + std::f64::consts::TAU - angles[n - 1];
            let anchors: Vec<EnuPoint> = angles
                .iter()
                .map(|t| {
                    let r = rng.random_range(400.0..1000.0);
                    EnuPoint::new(r * t.cos(), r * t.sin())
                })
                .collect();
            // No gap wider than ~150° keeps the polygon from collapsing to a sliver.
            if check_geometry(&anchors).is_ok() && wrap < 2.6 && angles.windows(2).all(|w| w[1] - w[0] < 2.6) {
                break anchors;
            }
        };
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let wsum: f64 = weights.iter().sum();
        let truth = EnuPoint::new(
            anchors.iter().zip(&weights).map(|(a, w)| a.east * w).sum::<f64>() / wsum,
            anchors.iter().zip(&weights).map(|(a, w)| a.north * w).sum::<f64>() / wsum,
        );
        let sigma = rng.random_range(0.1..3.0);
        let d0 = anchors[0].distance(&truth);
        let obs: Vec<PlanarRangeDifference> = anchors[1..]
            .iter()
            .map(|a| PlanarRangeDifference {
                anchor: *a,
                difference: a.distance(&truth) - d0,
                sigma,
            })
            .collect();
        let sol = solve_tdoa(anchors[0], &obs, 10.0).map_err(|e| format!("TDOA #{trial}: {e}"))?;
        tdoa_planar = tdoa_planar.max(sol.point.distance(&truth));
        let reference = anchors[0];
        let cost = |e: f64, nn: f64| {
            let r0 = (e - reference.east).hypot(nn - reference.north);
            obs.iter()
                .map(|o| (((e - o.anchor.east).hypot(nn - o.anchor.north) - r0 - o.difference) / o.sigma).powi(2))
                .sum::<f64>()
        };
        let (lo, hi) = bbox(&anchors);
        let (_, grid_cost) = grid_oracle(&cost, lo, hi);
        ensure!(
            sol.cost <= grid_cost + 1e-12,
            "TDOA #{trial}: solver cost {} above grid cost {grid_cost}",
            sol.cost
        );

        let origin = random_origin(&mut rng);
        let placed = place(&origin, &anchors, truth);
        let d0 = placed.planar[0].distance(&placed.truth_planar);
        let reference = beacon(0, BeaconKind::CellTower, placed.geo[0]);
        let measurements: Vec<TdoaMeasurement> = (1..n)
            .map(|i| TdoaMeasurement {
                reference: reference.clone(),
                beacon: beacon(i, BeaconKind::CellTower, placed.geo[i]),
                delta_t: (placed.planar[i].distance(&placed.truth_planar) - d0) / SPEED_OF_LIGHT,
                sigma_t: sigma / SPEED_OF_LIGHT,
            })
            .collect();
        let fix = multilaterate_tdoa(&measurements, 0).map_err(|e| format!("geodetic TDOA #{trial}: {e}"))?;
        tdoa_geo = tdoa_geo.max(planar_error(&placed.frame, &fix.position, &placed.truth_planar));
    }
    ensure!(tdoa_planar < 1e-3, "TDOA max error {tdoa_planar:e} m");
    ensure!(tdoa_geo < 1e-3, "geodetic TDOA max error {tdoa_geo:e} m");

    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!(
        "trilateration max err {tri_planar:.1e} m (geodetic {tri_geo:.1e}); TDOA {tdoa_planar:.1e} m (geodetic {tdoa_geo:.1e}); costs ≤ grid oracle"
    ))
}

pub fn noise_monotonicity() -> Outcome {
    const SIGMAS: [f64; 4] = [0.0, 1.0, 5.0, 20.0];
    const TRIALS: usize = 500;
    let mut errors = vec![Vec::with_capacity(TRIALS); SIGMAS.len()];
    for trial in 0..TRIALS {
        let mut geo_rng = ChaCha8Rng::seed_from_u64(7_000 + trial as u64);
        let n = geo_rng.random_range(4..=6);
        let anchors = scattered(&mut geo_rng, n, 500.0);
        let (lo, hi) = bbox(&anchors);
        let truth = EnuPoint::new(
            geo_rng.random_range(lo.east..hi.east),
            geo_rng.random_range(lo.north..hi.north),
        );
        let unit: Vec<f64> = {
            let std = Normal::new(0.0, 1.0).unwrap();
            (0..n).map(|_| std.sample(&mut geo_rng)).collect()
        };
        for (slot, &sigma) in SIGMAS.iter().enumerate() {
            let obs: Vec<PlanarRange> = anchors
                .iter()
                .zip(&unit)
                .map(|(a, z)| PlanarRange {
                    anchor: *a,
                    range: (a.distance(&truth) + sigma * z).max(0.0),
                    sigma: sigma.max(0.1),
                })
                .collect();
            let err = match solve_ranges(&obs) {
                Ok(sol) => sol.point.distance(&truth),
                Err(_) => f64::INFINITY,
            };
            errors[slot].push(err);
        }
    }
    let medians: Vec<f64> = errors
        .iter_mut()
        .map(|e| {
            e.sort_by(f64::total_cmp);
            (e[TRIALS / 2 - 1] + e[TRIALS / 2]) / 2.0
        })
        .collect();
    let listing = SIGMAS
        .iter()
        .zip(&medians)
        .map(|(s, m)| format!("σ={s}: {m:.3e}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure!(medians.windows(2).all(|w| w[0] <= w[1]), "medians not monotone: {listing}");
    Ok(format!("median error {listing} m"))
}
