//! Utility loss of giving up a resource and the back-off curves that map
//! that loss to a back-off probability.

use std::fmt;
use std::str::FromStr;

use crate::error::{AlmaError, Result};

/// How many of the following resources the loss averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Horizon {
    /// k = i + 1: only the immediate next alternative.
    #[default]
    Next,
    /// k = R^n: every remaining alternative.
    Full,
    /// Explicit k (1-based, clamped to the list length).
    Fixed(usize),
}

impl Horizon {
    /// Resolves k for 1-based position `i` in a list of `len` resources.
    pub fn k(self, i: usize, len: usize) -> usize {
        match self {
            Horizon::Next => (i + 1).min(len),
            Horizon::Full => len,
            Horizon::Fixed(k) => k.clamp((i + 1).min(len), len),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Curve {
    Linear { epsilon: f64 },
    Logistic { gamma: f64 },
}

impl Curve {
    pub fn probability(self, loss: f64) -> f64 {
        match self {
            Curve::Linear { epsilon } => linear_backoff(loss, epsilon),
            Curve::Logistic { gamma } => logistic_backoff(loss, gamma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackoffPolicy {
    pub horizon: Horizon,
    pub curve: Curve,
}

impl BackoffPolicy {
    pub fn linear(epsilon: f64) -> Result<Self> {
        Self::new(Horizon::Next, Curve::Linear { epsilon })
    }

    pub fn logistic(gamma: f64) -> Result<Self> {
        Self::new(Horizon::Next, Curve::Logistic { gamma })
    }

    pub fn new(horizon: Horizon, curve: Curve) -> Result<Self> {
        match curve {
            Curve::Linear { epsilon } if !(epsilon > 0.0 && epsilon < 0.5) => {
                Err(AlmaError::Config(format!("linear epsilon must be in (0, 0.5), got {epsilon}")))
            }
            Curve::Logistic { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(AlmaError::Config(format!("logistic gamma must be > 0, got {gamma}")))
            }
            _ => Ok(Self { horizon, curve }),
        }
    }

    pub fn with_horizon(mut self, horizon: Horizon) -> Self {
        self.horizon = horizon;
        self
    }

    /// Back-off probability for 0-based position `idx` in `sorted` utilities.
    pub fn probability_at(&self, sorted: &[f64], idx: usize) -> f64 {
        let i = idx + 1;
        let k = self.horizon.k(i, sorted.len());
        self.curve.probability(loss(sorted, i, k).expect("index within preference list"))
    }
}

/// Parses `linear:<eps>` or `logistic:<gamma>`.
impl FromStr for BackoffPolicy {
    type Err = AlmaError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| AlmaError::Config(format!("back-off `{s}` is not `linear:<eps>` or `logistic:<gamma>`")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| AlmaError::Config(format!("bad back-off parameter `{value}`")))?;
        match kind.trim() {
            "linear" => Self::linear(value),
            "logistic" => Self::logistic(value),
            other => Err(AlmaError::Config(format!("unknown back-off curve `{other}`"))),
        }
    }
}

impl fmt::Display for BackoffPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.curve {
            Curve::Linear { epsilon } => write!(f, "linear:{epsilon}"),
            Curve::Logistic { gamma } => write!(f, "logistic:{gamma}"),
        }
    }
}

/// Average utility drop from `r_i` to each of `r_{i+1} ..= r_k`, with
/// 1-based `i` and `k` over descending utilities.
///
/// At the last resource (`i == len`) there is nothing to switch to and the
/// loss is the resource's own utility.
pub fn loss(sorted: &[f64], i: usize, k: usize) -> Result<f64> {
    let len = sorted.len();
    if i == 0 || i > len {
        return Err(AlmaError::Index(format!("loss position {i} outside 1..={len}")));
    }
    let ui = sorted[i - 1];
    if i == len {
        return Ok(ui);
    }
    if k <= i || k > len {
        return Err(AlmaError::Index(format!("horizon k={k} outside {}..={len}", i + 1)));
    }
    let total: f64 = sorted[i..k].iter().map(|&uj| ui - uj).sum();
    Ok(total / (k - i) as f64)
}

pub fn linear_backoff(loss: f64, epsilon: f64) -> f64 {
    if loss <= epsilon {
        1.0 - epsilon
    } else if 1.0 - loss <= epsilon {
        epsilon
    } else {
        1.0 - loss
    }
}

pub fn logistic_backoff(loss: f64, gamma: f64) -> f64 {
    1.0 / (1.0 + (-gamma * (0.5 - loss)).exp())
}
