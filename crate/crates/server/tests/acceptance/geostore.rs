use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use lbsn_core::geomath::{haversine, GeoPoint};
use lbsn_core::geostore::GeoStore;
use lbsn_core::localization::{Fix, Method};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

/// Clusters where users gather, including one astride the antimeridian and
/// one near the pole.
const HOTSPOTS: [(f64, f64); 4] = [(38.91, 121.61), (39.90, 116.40), (-16.5, 179.95), (84.0, 20.0)];

fn random_point(rng: &mut ChaCha8Rng) -> GeoPoint {
    let (lat, lon) = HOTSPOTS[rng.random_range(0..HOTSPOTS.len())];
    let lat = (lat + rng.random_range(-0.2..0.2_f64)).clamp(-90.0, 90.0);
    let mut lon = lon + rng.random_range(-0.3..0.3);
    if lon > 180.0 {
        lon -= 360.0;
    }
    GeoPoint::new(lat, lon).unwrap()
}

struct Shadow {
    position: GeoPoint,
    online: bool,
}

pub fn equivalence() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6E0);
    let mut store = GeoStore::default();
    let mut shadow: BTreeMap<u64, Shadow> = BTreeMap::new();
    let (mut radius_q, mut knn_q, mut nonempty) = (0, 0, 0);
    for op in 0..10_000 {
        let now = 1_000 + op as i64;
        match rng.random_range(0..10) {
            0..=3 => {
                let user = rng.random_range(1..=600u64);
                let position = random_point(&mut rng);
                let fix = Fix {
                    position,
                    accuracy: 10.0,
                    method: Method::Gps,
                    residual_rms: 0.0,
                    timestamp: now,
                };
                store.upsert_position(user, fix).map_err(|e| format!("op {op}: {e}"))?;
                let online = shadow.get(&user).is_some_and(|s| s.online);
                shadow.insert(user, Shadow { position, online });
            }
            4 => {
                let user = rng.random_range(1..=600u64);
                let removed = store.remove(user).is_some();
                ensure!(removed == shadow.remove(&user).is_some(), "op {op}: remove({user}) disagreed");
            }
            5 => {
                let user = rng.random_range(1..=600u64);
                let online = rng.random_bool(0.5);
                store.set_online(user, online);
                if let Some(s) = shadow.get_mut(&user) {
                    s.online = online;
                }
            }
            6..=8 => {
                radius_q += 1;
                let center = random_point(&mut rng);
                let radius = [50.0, 500.0, 5_000.0, 20_000.0, 50_000.0][rng.random_range(0..5)];
                let online_only = rng.random_bool(0.3);
                let got: BTreeSet<u64> = store
                    .query_radius(&center, radius, online_only)
                    .map_err(|e| format!("op {op}: {e}"))?
                    .iter()
                    .map(|r| r.user_id)
                    .collect();
                let want: BTreeSet<u64> = shadow
                    .iter()
                    .filter(|(_, s)| (!online_only || s.online) && haversine(&center, &s.position) <= radius)
                    .map(|(u, _)| *u)
                    .collect();
                nonempty += usize::from(!want.is_empty());
                ensure!(
                    got == want,
                    "op {op}: radius {radius} at {center:?}: index {} vs scan {}",
                    got.len(),
                    want.len()
                );
            }
            _ => {
                knn_q += 1;
                let center = random_point(&mut rng);
                let k = rng.random_range(1..=25);
                let got: Vec<u64> = store.query_knn(&center, k).iter().map(|r| r.user_id).collect();
                let mut scan: Vec<(f64, u64)> =
                    shadow.iter().map(|(u, s)| (haversine(&center, &s.position), *u)).collect();
                scan.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let want: Vec<u64> = scan.iter().take(k).map(|(_, u)| *u).collect();
                ensure!(
                    got.iter().collect::<BTreeSet<_>>() == want.iter().collect::<BTreeSet<_>>(),
                    "op {op}: knn k={k} at {center:?}: {got:?} vs {want:?}"
                );
            }
        }
    }
    store.audit().map_err(|e| format!("index audit: {e}"))?;
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1}s");
    Ok(format!(
        "10⁴ ops, {radius_q} radius queries ({nonempty} non-empty) and {knn_q} kNN queries equal to linear scan"
    ))
}
