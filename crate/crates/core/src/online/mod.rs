//! On-line ride sharing: requests wait a few minutes for a partner and are
//! paired by the decentralized heuristic or a batching baseline.

pub mod distance;
pub mod requests;
pub mod sim;

use std::fmt;
use std::str::FromStr;

use crate::error::{AlmaError, Result};

pub use distance::{DistanceMatrix, DistanceProvider, GeoPoint, Haversine, ManhattanGrid, Metric};
pub use requests::{load_requests, save_requests, OnlineRequest, SyntheticDay, WaitRule};
pub use sim::{
    clairvoyant_offline, competitive_ratio, simulate_online, EventKind, OfflineOptimum, OnlineEvent, OnlineResult,
};

/// Candidate non-myopic thresholds in km.
pub const D_MIN_GRID_KM: [f64; 6] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Critical requests run the heuristic against all current requests.
    Alma,
    /// Maximum-weight matching of current requests whenever one turns critical.
    JitMwm,
    /// Maximum-weight matching of current requests every `x` minutes.
    Bmwm(i64),
    /// Greedy matching every `x` minutes; unmatched requests leave.
    Bg(i64),
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Alma => write!(f, "alma"),
            Algorithm::JitMwm => write!(f, "jitmwm"),
            Algorithm::Bmwm(x) => write!(f, "bmwm:{x}"),
            Algorithm::Bg(x) => write!(f, "bg:{x}"),
        }
    }
}

/// `alma`, `jitmwm`, `bmwm:<x>`, `bg:<x>`.
impl FromStr for Algorithm {
    type Err = AlmaError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, x) = match s.split_once(':') {
            Some((n, x)) => {
                let x: i64 =
                    x.trim().parse().map_err(|_| AlmaError::Config(format!("bad batch size in `{s}`")))?;
                if x < 1 {
                    return Err(AlmaError::Config(format!("batch size must be >= 1 in `{s}`")));
                }
                (n.trim(), Some(x))
            }
            None => (s, None),
        };
        match (name, x) {
            ("alma", None) => Ok(Algorithm::Alma),
            ("jitmwm", None) => Ok(Algorithm::JitMwm),
            ("bmwm", Some(x)) => Ok(Algorithm::Bmwm(x)),
            ("bg", Some(x)) => Ok(Algorithm::Bg(x)),
            _ => Err(AlmaError::Config(format!("unknown on-line algorithm `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineConfig {
    pub wait: WaitRule,
    /// Pairs saving less than this many km are skipped unless one side is
    /// critical; `None` disables the filter.
    pub d_min: Option<f64>,
    pub algorithm: Algorithm,
}

impl OnlineConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self { wait: WaitRule::default(), d_min: None, algorithm }
    }

    pub fn with_d_min(mut self, d_min: f64) -> Self {
        self.d_min = Some(d_min);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.wait.validate()?;
        if let Some(d) = self.d_min {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(AlmaError::Config(format!("d_min must be finite and >= 0, got {d}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_labels_round_trip() {
        for a in [Algorithm::Alma, Algorithm::JitMwm, Algorithm::Bmwm(2), Algorithm::Bg(5)] {
            assert_eq!(a.to_string().parse::<Algorithm>().unwrap(), a);
        }
        assert!("bmwm".parse::<Algorithm>().is_err());
        assert!("bg:0".parse::<Algorithm>().is_err());
        assert!("alma:3".parse::<Algorithm>().is_err());
    }
}
