//! Ride requests, patience rule, CSV I/O and a synthetic day generator.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{AlmaError, Result};
use crate::rng;

use super::distance::{GeoPoint, ManhattanGrid, Metric};

pub const REQUEST_CSV_HEADER: &str = "id,pickup_ts,dropoff_ts,pickup_lat,pickup_lon,dropoff_lat,dropoff_lon";

/// How long a request waits for a partner: `clamp(round(q * trip_len), min, max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaitRule {
    pub min_wait: i64,
    /// `None` means unbounded.
    pub max_wait: Option<i64>,
    pub q: f64,
}

impl Default for WaitRule {
    fn default() -> Self {
        Self { min_wait: 1, max_wait: Some(3), q: 0.1 }
    }
}

impl WaitRule {
    pub fn new(min_wait: i64, max_wait: Option<i64>, q: f64) -> Result<Self> {
        let rule = Self { min_wait, max_wait, q };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_wait < 0 {
            return Err(AlmaError::Config(format!("min wait must be >= 0, got {}", self.min_wait)));
        }
        if let Some(max) = self.max_wait {
            if max < self.min_wait {
                return Err(AlmaError::Config(format!("max wait {max} below min wait {}", self.min_wait)));
            }
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(AlmaError::Config(format!("q must be in [0, 1], got {}", self.q)));
        }
        Ok(())
    }

    pub fn patience(&self, trip_len: i64) -> i64 {
        let k = (self.q * trip_len as f64).round() as i64;
        let k = k.max(self.min_wait);
        match self.max_wait {
            Some(max) => k.min(max),
            None => k,
        }
    }
}

/// Times are whole minutes; `deadline` is the minute the request turns critical.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineRequest {
    pub id: usize,
    pub arrival: i64,
    pub trip_len: i64,
    pub pickup: GeoPoint,
    pub dropoff: GeoPoint,
    pub deadline: i64,
}

impl OnlineRequest {
    pub fn new(
        id: usize,
        arrival: i64,
        trip_len: i64,
        pickup: GeoPoint,
        dropoff: GeoPoint,
        wait: &WaitRule,
    ) -> Result<Self> {
        if trip_len < 0 {
            return Err(AlmaError::Config(format!("request {id}: negative trip length {trip_len}")));
        }
        Ok(Self { id, arrival, trip_len, pickup, dropoff, deadline: arrival + wait.patience(trip_len) })
    }

    /// Both requests are waiting at some common minute.
    pub fn overlaps(&self, other: &OnlineRequest) -> bool {
        self.arrival.max(other.arrival) <= self.deadline.min(other.deadline)
    }
}

/// Integer epoch minutes or an ISO-8601 timestamp (seconds are truncated).
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(m) = s.parse::<i64>() {
        return Some(m);
    }
    let secs = if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        dt.timestamp()
    } else {
        ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
            .iter()
            .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())?
            .and_utc()
            .timestamp()
    };
    Some(secs.div_euclid(60))
}

pub fn parse_requests(text: &str, wait: &WaitRule) -> Result<Vec<OnlineRequest>> {
    wait.validate()?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == REQUEST_CSV_HEADER => {}
        _ => return Err(AlmaError::parse(1, format!("expected header `{REQUEST_CSV_HEADER}`"))),
    }
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 7 {
            return Err(AlmaError::parse(line_no, format!("expected 7 fields, got {}", f.len())));
        }
        let id: usize = f[0].parse().map_err(|_| AlmaError::parse(line_no, format!("bad id `{}`", f[0])))?;
        if !seen.insert(id) {
            return Err(AlmaError::parse(line_no, format!("duplicate id {id}")));
        }
        let ts = |s: &str| parse_timestamp(s).ok_or_else(|| AlmaError::parse(line_no, format!("bad timestamp `{s}`")));
        let coord = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| AlmaError::parse(line_no, format!("bad coordinate `{s}`")))
        };
        let (pickup_ts, dropoff_ts) = (ts(f[1])?, ts(f[2])?);
        if dropoff_ts < pickup_ts {
            return Err(AlmaError::parse(line_no, "drop-off before pick-up"));
        }
        let pickup = GeoPoint::new(coord(f[3])?, coord(f[4])?);
        let dropoff = GeoPoint::new(coord(f[5])?, coord(f[6])?);
        out.push(OnlineRequest::new(id, pickup_ts, dropoff_ts - pickup_ts, pickup, dropoff, wait)?);
    }
    out.sort_by_key(|r| (r.arrival, r.id));
    Ok(out)
}

pub fn load_requests(path: impl AsRef<Path>, wait: &WaitRule) -> Result<Vec<OnlineRequest>> {
    let path = path.as_ref();
    parse_requests(&fs::read_to_string(path).map_err(|e| AlmaError::io(path, e))?, wait)
}

/// Writes epoch-minute timestamps.
pub fn requests_to_csv(requests: &[OnlineRequest]) -> String {
    let mut out = String::from(REQUEST_CSV_HEADER);
    out.push('\n');
    for r in requests {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.id,
            r.arrival,
            r.arrival + r.trip_len,
            r.pickup.lat,
            r.pickup.lon,
            r.dropoff.lat,
            r.dropoff.lon
        );
    }
    out
}

pub fn save_requests(requests: &[OnlineRequest], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, requests_to_csv(requests)).map_err(|e| AlmaError::io(path, e))
}

/// A day of requests drawn around a few pickup/drop-off hotspots.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDay {
    pub n_requests: usize,
    /// First minute (epoch minutes) and length of the arrival window.
    pub start: i64,
    pub span_minutes: i64,
    pub center: GeoPoint,
    pub hotspots: usize,
    /// Spread of hotspots around the centre and of points around a hotspot, km.
    pub city_radius_km: f64,
    pub hotspot_sd_km: f64,
    pub speed_km_per_min: f64,
}

impl Default for SyntheticDay {
    fn default() -> Self {
        Self {
            n_requests: 100,
            // 2016-01-01 08:00 UTC
            start: 24_193_920,
            span_minutes: 240,
            center: GeoPoint::new(40.754, -73.984),
            hotspots: 6,
            city_radius_km: 4.0,
            hotspot_sd_km: 0.8,
            speed_km_per_min: 0.4,
        }
    }
}

impl SyntheticDay {
    pub fn generate(&self, wait: &WaitRule, seed: u64) -> Result<Vec<OnlineRequest>> {
        wait.validate()?;
        if self.span_minutes <= 0 || self.hotspots == 0 || !(self.speed_km_per_min > 0.0) {
            return Err(AlmaError::Config("synthetic day needs positive span, hotspots and speed".into()));
        }
        let mut rng = rng::seeded(seed);
        let km_lat = 1.0 / 111.195;
        let km_lon = km_lat / self.center.lat.to_radians().cos();
        let spread = Normal::new(0.0, self.city_radius_km).map_err(|e| AlmaError::Config(e.to_string()))?;
        let local = Normal::new(0.0, self.hotspot_sd_km).map_err(|e| AlmaError::Config(e.to_string()))?;
        let spots: Vec<GeoPoint> = (0..self.hotspots)
            .map(|_| {
                GeoPoint::new(
                    self.center.lat + spread.sample(&mut rng) * km_lat,
                    self.center.lon + spread.sample(&mut rng) * km_lon,
                )
            })
            .collect();
        let point = |rng: &mut rng::Rng| {
            let s = spots[rng.random_range(0..spots.len())];
            GeoPoint::new(s.lat + local.sample(rng) * km_lat, s.lon + local.sample(rng) * km_lon)
        };
        let mut arrivals: Vec<i64> =
            (0..self.n_requests).map(|_| self.start + rng.random_range(0..self.span_minutes)).collect();
        arrivals.sort_unstable();
        arrivals
            .into_iter()
            .enumerate()
            .map(|(id, arrival)| {
                let pickup = point(&mut rng);
                let dropoff = point(&mut rng);
                let len = (ManhattanGrid.km(pickup, dropoff) / self.speed_km_per_min).ceil().max(1.0) as i64;
                OnlineRequest::new(id, arrival, len, pickup, dropoff, wait)
            })
            .collect()
    }
}
