//! Distance providers and the saved distance of sharing one vehicle.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{AlmaError, Result};

use super::requests::OnlineRequest;

pub const EARTH_RADIUS_KM: f64 = 6371.0;
const KM_PER_DEGREE: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// Point-to-point driving distance estimate in km.
pub trait Metric {
    fn km(&self, from: GeoPoint, to: GeoPoint) -> f64;
}

/// Kilometres saved when two requests share one vehicle; 0 when no shared
/// route beats driving both trips separately.
pub trait DistanceProvider: Sync {
    fn saved(&self, a: &OnlineRequest, b: &OnlineRequest) -> Result<f64>;
}

/// Street-grid proxy: |Δnorth| + |Δeast| on a local equirectangular projection.
#[derive(Debug, Clone, Copy, Default)]
pub struct ManhattanGrid;

impl Metric for ManhattanGrid {
    fn km(&self, from: GeoPoint, to: GeoPoint) -> f64 {
        let mid_lat = (0.5 * (from.lat + to.lat)).to_radians();
        let north = (to.lat - from.lat).abs() * KM_PER_DEGREE;
        let east = (to.lon - from.lon).abs() * KM_PER_DEGREE * mid_lat.cos();
        north + east
    }
}

impl DistanceProvider for ManhattanGrid {
    fn saved(&self, a: &OnlineRequest, b: &OnlineRequest) -> Result<f64> {
        Ok(saved_distance(self, a, b))
    }
}

/// Great-circle distance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Haversine;

impl Metric for Haversine {
    fn km(&self, from: GeoPoint, to: GeoPoint) -> f64 {
        let (p1, p2) = (from.lat.to_radians(), to.lat.to_radians());
        let dp = p2 - p1;
        let dl = (to.lon - from.lon).to_radians();
        let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
    }
}

impl DistanceProvider for Haversine {
    fn saved(&self, a: &OnlineRequest, b: &OnlineRequest) -> Result<f64> {
        Ok(saved_distance(self, a, b))
    }
}

pub fn trip_km(metric: &impl Metric, r: &OnlineRequest) -> f64 {
    metric.km(r.pickup, r.dropoff)
}

/// Shortest of the four routes that pick both passengers up before dropping
/// either off.
pub fn shared_route_km(metric: &impl Metric, a: &OnlineRequest, b: &OnlineRequest) -> f64 {
    let d = |p, q| metric.km(p, q);
    let (pa, pb, da, db) = (a.pickup, b.pickup, a.dropoff, b.dropoff);
    [
        d(pa, pb) + d(pb, da) + d(da, db),
        d(pa, pb) + d(pb, db) + d(db, da),
        d(pb, pa) + d(pa, da) + d(da, db),
        d(pb, pa) + d(pa, db) + d(db, da),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

pub fn saved_distance(metric: &impl Metric, a: &OnlineRequest, b: &OnlineRequest) -> f64 {
    (trip_km(metric, a) + trip_km(metric, b) - shared_route_km(metric, a, b)).max(0.0)
}

/// Precomputed saved distances keyed by unordered request-id pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistanceMatrix {
    pub n: usize,
    saved: HashMap<(usize, usize), f64>,
}

impl DistanceMatrix {
    pub fn new(n: usize) -> Self {
        Self { n, saved: HashMap::new() }
    }

    pub fn insert(&mut self, i: usize, j: usize, km: f64) -> Result<()> {
        if i == j || i >= self.n || j >= self.n {
            return Err(AlmaError::Index(format!("pair ({i}, {j}) invalid for n={}", self.n)));
        }
        if !(km >= 0.0 && km.is_finite()) {
            return Err(AlmaError::Config(format!("saved distance must be finite and >= 0, got {km}")));
        }
        self.saved.insert((i.min(j), i.max(j)), km);
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Result<f64> {
        self.saved.get(&(i.min(j), i.max(j))).copied().ok_or(AlmaError::MissingPair(i, j))
    }

    /// Full matrix for a request list computed with `metric`.
    pub fn precompute(metric: &impl Metric, requests: &[OnlineRequest]) -> Result<Self> {
        let n = requests.iter().map(|r| r.id + 1).max().unwrap_or(0);
        let mut m = Self::new(n);
        for (x, a) in requests.iter().enumerate() {
            for b in &requests[x + 1..] {
                m.insert(a.id, b.id, saved_distance(metric, a, b))?;
            }
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut keys: Vec<_> = self.saved.keys().copied().collect();
        keys.sort_unstable();
        let mut out = format!("alma-distmat v1 n={}\n", self.n);
        for (i, j) in keys {
            let _ = writeln!(out, "{i} {j} {}", self.saved[&(i, j)]);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| AlmaError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        fs::read_to_string(path).map_err(|e| AlmaError::io(path, e))?.parse()
    }
}

impl FromStr for DistanceMatrix {
    type Err = AlmaError;

    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s.lines().enumerate().filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        });
        let (_, header) = lines.next().ok_or_else(|| AlmaError::parse(1, "empty distance matrix"))?;
        let n = header
            .trim()
            .strip_prefix("alma-distmat v1 n=")
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| AlmaError::parse(1, "expected `alma-distmat v1 n=<int>`"))?;
        let mut m = Self::new(n);
        for (idx, line) in lines {
            let line_no = idx + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(AlmaError::parse(line_no, "expected `i j km`"));
            }
            let i: usize = f[0].parse().map_err(|_| AlmaError::parse(line_no, format!("bad index `{}`", f[0])))?;
            let j: usize = f[1].parse().map_err(|_| AlmaError::parse(line_no, format!("bad index `{}`", f[1])))?;
            let km: f64 = f[2].parse().map_err(|_| AlmaError::parse(line_no, format!("bad distance `{}`", f[2])))?;
            m.insert(i, j, km).map_err(|e| AlmaError::parse(line_no, e.to_string()))?;
        }
        Ok(m)
    }
}

impl DistanceProvider for DistanceMatrix {
    fn saved(&self, a: &OnlineRequest, b: &OnlineRequest) -> Result<f64> {
        self.get(a.id, b.id)
    }
}
