//! Numerical side of the convergence analysis.
//!
//! The single-resource contest is a chain over the number of agents still
//! competing. From state `i > 1` every competitor independently stays with
//! probability `1 - p`, so the next state is Binomial(i, 1 - p). The three
//! variants differ only at states 0 and 1:
//!
//! * [`ChainVariant::Restart`]: 1 absorbs, 0 jumps back to N (X).
//! * [`ChainVariant::AbsorbZeroOne`]: both 0 and 1 absorb (Y).
//! * [`ChainVariant::AbsorbZero`]: only 0 absorbs, 1 keeps flipping (Z).
//!
//! Y and Z only move downwards, so their hitting systems are lower
//! triangular and are solved exactly by forward substitution. X has the
//! restart edge and goes through a dense LU solve.

use nalgebra::{DMatrix, DVector};

use crate::backoff::BackoffPolicy;
use crate::error::{AlmaError, Result};
use crate::instance::MatchingInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainVariant {
    Restart,
    AbsorbZeroOne,
    AbsorbZero,
}

impl ChainVariant {
    pub fn label(self) -> &'static str {
        match self {
            ChainVariant::Restart => "X",
            ChainVariant::AbsorbZeroOne => "Y",
            ChainVariant::AbsorbZero => "Z",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackoffChain {
    n: usize,
    p: f64,
    variant: ChainVariant,
    ln_fact: Vec<f64>,
}

impl BackoffChain {
    /// Chain on states `0..=n` with per-competitor back-off probability `p`.
    pub fn new(n: usize, p: f64, variant: ChainVariant) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(AlmaError::SingularChain(p));
        }
        if n == 0 {
            return Err(AlmaError::Config("chain needs at least one agent".into()));
        }
        let mut ln_fact = vec![0.0; n + 1];
        for k in 1..=n {
            ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
        }
        Ok(Self { n, p, variant, ln_fact })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn variant(&self) -> ChainVariant {
        self.variant
    }

    pub fn is_absorbing(&self, i: usize) -> bool {
        match self.variant {
            ChainVariant::Restart => i == 1,
            ChainVariant::AbsorbZeroOne => i <= 1,
            ChainVariant::AbsorbZero => i == 0,
        }
    }

    /// C(i, j) p^(i-j) (1-p)^j, evaluated in log space.
    fn binomial(&self, i: usize, j: usize) -> f64 {
        let ln_c = self.ln_fact[i] - self.ln_fact[j] - self.ln_fact[i - j];
        (ln_c + (i - j) as f64 * self.p.ln() + j as f64 * (1.0 - self.p).ln()).exp()
    }

    pub fn transition(&self, i: usize, j: usize) -> f64 {
        if i > self.n || j > self.n {
            return 0.0;
        }
        if self.is_absorbing(i) {
            return if i == j { 1.0 } else { 0.0 };
        }
        if i == 0 {
            // only the restart chain reaches here
            return if j == self.n { 1.0 } else { 0.0 };
        }
        if j > i {
            0.0
        } else {
            self.binomial(i, j)
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..=self.n).map(|j| self.transition(i, j)).collect()
    }

    fn lower_triangular(&self) -> bool {
        self.variant != ChainVariant::Restart
    }

    /// States from which some target state is reachable.
    fn can_reach(&self, target: &[bool]) -> Vec<bool> {
        let mut reach = target.to_vec();
        loop {
            let mut changed = false;
            for i in 0..=self.n {
                if !reach[i] && (0..=self.n).any(|j| reach[j] && self.transition(i, j) > 0.0) {
                    reach[i] = true;
                    changed = true;
                }
            }
            if !changed {
                return reach;
            }
        }
    }

    fn target_mask(&self, target: &[usize]) -> Result<Vec<bool>> {
        if target.is_empty() {
            return Err(AlmaError::Config("empty target set".into()));
        }
        let mut mask = vec![false; self.n + 1];
        for &t in target {
            if t > self.n {
                return Err(AlmaError::Index(format!("target state {t} > N={}", self.n)));
            }
            mask[t] = true;
        }
        Ok(mask)
    }
}

/// Hitting probabilities of `target` from every state: the minimal
/// non-negative solution of `h = P h` off the target with `h = 1` on it.
pub fn hitting_probability(chain: &BackoffChain, target: &[usize]) -> Result<Vec<f64>> {
    let in_target = chain.target_mask(target)?;
    let reach = chain.can_reach(&in_target);
    let n = chain.n;

    if chain.lower_triangular() {
        let mut h = vec![0.0; n + 1];
        for i in 0..=n {
            h[i] = if in_target[i] {
                1.0
            } else if !reach[i] || chain.is_absorbing(i) {
                0.0
            } else {
                let below: f64 = (0..i).map(|j| chain.transition(i, j) * h[j]).sum();
                below / (1.0 - chain.transition(i, i))
            };
        }
        return Ok(h);
    }

    // Unknowns: states that can reach the target but are not in it.
    let free: Vec<usize> = (0..=n).filter(|&i| reach[i] && !in_target[i]).collect();
    let mut h: Vec<f64> = in_target.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    if free.is_empty() {
        return Ok(h);
    }
    let m = free.len();
    let mut a = DMatrix::<f64>::identity(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (row, &i) in free.iter().enumerate() {
        for (col, &j) in free.iter().enumerate() {
            a[(row, col)] -= chain.transition(i, j);
        }
        b[row] = (0..=n).filter(|&j| in_target[j]).map(|j| chain.transition(i, j)).sum();
    }
    let x = a.lu().solve(&b).ok_or(AlmaError::SingularChain(chain.p))?;
    for (row, &i) in free.iter().enumerate() {
        h[i] = x[row];
    }
    Ok(h)
}

/// Expected number of steps to hit `target` from every state:
/// `T = 0` on the target, `T_i = 1 + sum_j p_ij T_j` elsewhere. Fails when
/// some state misses the target with positive probability.
pub fn hitting_time(chain: &BackoffChain, target: &[usize]) -> Result<Vec<f64>> {
    let in_target = chain.target_mask(target)?;
    let h = hitting_probability(chain, target)?;
    if h.iter().any(|&x| x < 1.0 - 1e-9) {
        return Err(AlmaError::UnreachableTarget(target.to_vec()));
    }
    let n = chain.n;

    if chain.lower_triangular() {
        let mut t = vec![0.0; n + 1];
        for i in 0..=n {
            if in_target[i] {
                continue;
            }
            let below: f64 = (0..i).filter(|&j| !in_target[j]).map(|j| chain.transition(i, j) * t[j]).sum();
            t[i] = (1.0 + below) / (1.0 - chain.transition(i, i));
        }
        return Ok(t);
    }

    let free: Vec<usize> = (0..=n).filter(|&i| !in_target[i]).collect();
    let m = free.len();
    let mut a = DMatrix::<f64>::identity(m, m);
    let b = DVector::<f64>::from_element(m, 1.0);
    for (row, &i) in free.iter().enumerate() {
        for (col, &j) in free.iter().enumerate() {
            a[(row, col)] -= chain.transition(i, j);
        }
    }
    let x = a.lu().solve(&b).ok_or(AlmaError::SingularChain(chain.p))?;
    let mut t = vec![0.0; n + 1];
    for (row, &i) in free.iter().enumerate() {
        t[i] = x[row];
    }
    Ok(t)
}

/// Mityushin's ceiling `ceil(log_beta i) + beta / (beta - 1)`.
pub fn mityushin_bound(beta: f64, i: usize) -> Result<f64> {
    if !(beta > 1.0 && beta.is_finite()) {
        return Err(AlmaError::Config(format!("beta must be > 1, got {beta}")));
    }
    if i == 0 {
        return Err(AlmaError::Index("Mityushin bound needs i >= 1".into()));
    }
    // log_2(8) evaluates to 3.0000000000000004; snap before ceil.
    let log = (i as f64).ln() / beta.ln();
    Ok((log - 1e-9).ceil().max(0.0) + beta / (beta - 1.0))
}

/// Lower bound 2(1-p)/(2-p) on the probability that a contest ends with a
/// single winner instead of everyone backing off.
pub fn single_winner_probability_bound(p: f64) -> f64 {
    2.0 * (1.0 - p) / (2.0 - p)
}

/// Growth expression (2-p)/(2p(1-p)) * ln N for the restart chain.
pub fn single_resource_scale(n: usize, p: f64) -> f64 {
    (2.0 - p) / (2.0 * p * (1.0 - p)) * (n as f64).ln()
}

/// `R (2-p)/(2(1-p)) ((1/p) ln N + R)` with unit constant.
pub fn convergence_bound(n: f64, r: f64, p: f64) -> f64 {
    r * (2.0 - p) / (2.0 * (1.0 - p)) * (n.max(1.0).ln() / p + r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundEstimate {
    pub loss_star: f64,
    pub p_star: f64,
    /// System-wide bound on expected convergence steps.
    pub steps_bound: f64,
    /// Largest per-agent bound on expected steps to acquire a resource.
    pub per_agent_bound: f64,
}

/// Picks the extreme loss that produces the worst back-off probability:
/// the minimum loss when `min <= 1 - max`, otherwise the maximum.
pub fn worst_loss(min_loss: f64, max_loss: f64) -> f64 {
    if min_loss <= 1.0 - max_loss {
        min_loss
    } else {
        max_loss
    }
}

/// `losses[n]` holds `(resource, loss)` for every positive-utility resource
/// of agent `n`, sorted by resource id.
fn agent_losses(instance: &MatchingInstance, policy: &BackoffPolicy) -> Vec<Vec<(usize, f64)>> {
    (0..instance.n_agents())
        .map(|n| {
            let prefs = instance.preferences(n);
            let utils: Vec<f64> = prefs.iter().map(|p| p.1).collect();
            let mut out: Vec<(usize, f64)> = prefs
                .iter()
                .enumerate()
                .map(|(idx, &(r, _))| {
                    let k = policy.horizon.k(idx + 1, utils.len());
                    (r, crate::backoff::loss(&utils, idx + 1, k).expect("position within list"))
                })
                .collect();
            out.sort_by_key(|e| e.0);
            out
        })
        .collect()
}

fn min_max(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, x| match acc {
        None => Some((x, x)),
        Some((lo, hi)) => Some((lo.min(x), hi.max(x))),
    })
}

/// System bound only; `None` when no agent has a positive-utility resource.
pub fn system_bound(instance: &MatchingInstance, policy: &BackoffPolicy) -> Option<f64> {
    let losses = agent_losses(instance, policy);
    let (lo, hi) = min_max(losses.iter().flatten().map(|e| e.1))?;
    let p = policy.curve.probability(worst_loss(lo, hi));
    Some(convergence_bound(instance.n_agents() as f64, instance.n_resources() as f64, p))
}

/// Per-agent bound over the agent's sub-system (its resources and every
/// agent interested in them). `None` for agents without resources.
pub fn per_agent_bounds(instance: &MatchingInstance, policy: &BackoffPolicy) -> Vec<Option<f64>> {
    let losses = agent_losses(instance, policy);
    let mut interested: Vec<Vec<usize>> = vec![Vec::new(); instance.n_resources()];
    for (n, list) in losses.iter().enumerate() {
        for &(r, _) in list {
            interested[r].push(n);
        }
    }
    losses
        .iter()
        .map(|own| {
            if own.is_empty() {
                return None;
            }
            let mut max_rn = 0usize;
            let mut max_nr = 0usize;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &(r, _) in own {
                max_nr = max_nr.max(interested[r].len());
                for &other in &interested[r] {
                    let list = &losses[other];
                    max_rn = max_rn.max(list.len());
                    let l = list[list.binary_search_by_key(&r, |e| e.0).unwrap()].1;
                    lo = lo.min(l);
                    hi = hi.max(l);
                }
            }
            let p = policy.curve.probability(worst_loss(lo, hi));
            Some(convergence_bound(max_nr as f64, max_rn as f64, p))
        })
        .collect()
}

pub fn compute_loss_star(instance: &MatchingInstance, policy: &BackoffPolicy) -> Result<BoundEstimate> {
    let losses = agent_losses(instance, policy);
    let (lo, hi) = min_max(losses.iter().flatten().map(|e| e.1)).ok_or(AlmaError::EmptyInstance)?;
    let loss_star = worst_loss(lo, hi);
    let p_star = policy.curve.probability(loss_star);
    let steps_bound = convergence_bound(instance.n_agents() as f64, instance.n_resources() as f64, p_star);
    let per_agent_bound = per_agent_bounds(instance, policy).into_iter().flatten().fold(0.0, f64::max);
    Ok(BoundEstimate { loss_star, p_star, steps_bound, per_agent_bound })
}

/// One line of the verification grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: &'static str,
    pub variant: &'static str,
    pub p: f64,
    pub n: usize,
    pub computed: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Deliberate corruption of the grid, used to prove the harness can fail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    /// Subtract this amount from every computed hitting probability.
    HittingProbability(f64),
}

pub const GRID_P: [f64; 19] = [
    0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90,
    0.95,
];
pub const GRID_MAX_STATE: usize = 50;
pub const SCALING_SIZES: [usize; 5] = [2, 4, 8, 16, 32];
pub const SCALING_P: f64 = 0.5;
/// The ceiling is attained exactly from state 1.
pub const CEILING_TOL: f64 = 1e-9;

/// Runs every numerical check of the convergence analysis.
pub fn verify_grid(fault: Option<Fault>) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let h_shift = match fault {
        Some(Fault::HittingProbability(d)) => d,
        None => 0.0,
    };

    for &p in &GRID_P {
        for variant in [ChainVariant::Restart, ChainVariant::AbsorbZeroOne, ChainVariant::AbsorbZero] {
            let chain = BackoffChain::new(GRID_MAX_STATE, p, variant)?;
            let worst = (0..=chain.n())
                .map(|i| (chain.row(i).iter().sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max);
            rows.push(CheckRow {
                check: "row-stochastic",
                variant: variant.label(),
                p,
                n: GRID_MAX_STATE,
                computed: worst,
                bound: 1e-12,
                pass: worst <= 1e-12,
            });
        }

        let y = BackoffChain::new(GRID_MAX_STATE, p, ChainVariant::AbsorbZeroOne)?;
        let z = BackoffChain::new(GRID_MAX_STATE, p, ChainVariant::AbsorbZero)?;
        let h = hitting_probability(&y, &[1])?;
        let lambda = single_winner_probability_bound(p);
        for (i, &hi) in h.iter().enumerate().skip(1) {
            let computed = hi - h_shift;
            rows.push(CheckRow {
                check: "single-winner-lower-bound",
                variant: "Y",
                p,
                n: i,
                computed,
                bound: lambda,
                pass: computed >= lambda - 1e-9,
            });
        }
        let tight = h[2] - h_shift;
        rows.push(CheckRow {
            check: "single-winner-tight-at-2",
            variant: "Y",
            p,
            n: 2,
            computed: tight,
            bound: lambda,
            pass: (tight - lambda).abs() <= 1e-9,
        });

        let tz = hitting_time(&z, &[0])?;
        let ty = hitting_time(&y, &[0, 1])?;
        let beta = 1.0 / (1.0 - p);
        for i in 1..=GRID_MAX_STATE {
            let ceiling = mityushin_bound(beta, i)?;
            rows.push(CheckRow {
                check: "mityushin-ceiling",
                variant: "Z",
                p,
                n: i,
                computed: tz[i],
                bound: ceiling,
                pass: tz[i] <= ceiling + CEILING_TOL,
            });
            rows.push(CheckRow {
                check: "y-before-z",
                variant: "Y",
                p,
                n: i,
                computed: ty[i],
                bound: tz[i],
                pass: ty[i] <= tz[i] + 1e-9,
            });
        }
    }

    {
        let p = SCALING_P;
        let ratios: Vec<f64> = SCALING_SIZES
            .iter()
            .map(|&n| {
                let x = BackoffChain::new(n, p, ChainVariant::Restart)?;
                Ok(hitting_time(&x, &[1])?[n] / single_resource_scale(n, p))
            })
            .collect::<Result<_>>()?;
        let spread = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        rows.push(CheckRow {
            check: "restart-log-scaling",
            variant: "X",
            p,
            n: *SCALING_SIZES.last().unwrap(),
            computed: spread,
            bound: 2.0,
            pass: spread <= 2.0,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backoff::BackoffPolicy;

    #[test]
    fn rows_are_stochastic_and_absorbing_rows_identity() {
        for variant in [ChainVariant::Restart, ChainVariant::AbsorbZeroOne, ChainVariant::AbsorbZero] {
            let c = BackoffChain::new(30, 0.37, variant).unwrap();
            for i in 0..=30 {
                let row = c.row(i);
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12, "{variant:?} row {i}");
                if c.is_absorbing(i) {
                    assert_eq!(row[i], 1.0);
                }
            }
        }
        let x = BackoffChain::new(5, 0.5, ChainVariant::Restart).unwrap();
        assert_eq!(x.transition(0, 5), 1.0);
    }

    #[test]
    fn degenerate_probabilities_rejected() {
        assert!(matches!(BackoffChain::new(4, 0.0, ChainVariant::AbsorbZero), Err(AlmaError::SingularChain(_))));
        assert!(matches!(BackoffChain::new(4, 1.0, ChainVariant::Restart), Err(AlmaError::SingularChain(_))));
    }

    #[test]
    fn base_case_hitting_probability() {
        let y = BackoffChain::new(10, 0.5, ChainVariant::AbsorbZeroOne).unwrap();
        let h = hitting_probability(&y, &[1]).unwrap();
        assert!((h[2] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(h[1], 1.0);
        assert_eq!(h[0], 0.0);
    }

    #[test]
    fn lemma_bound_on_small_grid() {
        for k in 1..=9 {
            let p = k as f64 / 10.0;
            let y = BackoffChain::new(20, p, ChainVariant::AbsorbZeroOne).unwrap();
            let h = hitting_probability(&y, &[1]).unwrap();
            let lambda = single_winner_probability_bound(p);
            assert!(h[1..].iter().all(|&x| x >= lambda - 1e-9), "p = {p}");
        }
    }

    #[test]
    fn forward_substitution_matches_power_iteration() {
        let y = BackoffChain::new(12, 0.3, ChainVariant::AbsorbZeroOne).unwrap();
        let h = hitting_probability(&y, &[1]).unwrap();
        let mut dist = vec![0.0; 13];
        dist[12] = 1.0;
        for _ in 0..5000 {
            let mut next = vec![0.0; 13];
            for i in 0..=12 {
                for j in 0..=12 {
                    next[j] += dist[i] * y.transition(i, j);
                }
            }
            dist = next;
        }
        assert!((dist[1] - h[12]).abs() < 1e-12);
    }

    #[test]
    fn zero_absorbing_single_agent_is_geometric() {
        for p in [0.1, 0.25, 0.5, 0.9] {
            let z = BackoffChain::new(1, p, ChainVariant::AbsorbZero).unwrap();
            let t = hitting_time(&z, &[0]).unwrap();
            assert!((t[1] - 1.0 / p).abs() < 1e-12);
        }
    }

    #[test]
    fn absorbed_state_has_zero_time() {
        let y = BackoffChain::new(8, 0.4, ChainVariant::AbsorbZeroOne).unwrap();
        let t = hitting_time(&y, &[0, 1]).unwrap();
        assert_eq!(t[1], 0.0);
        assert_eq!(t[0], 0.0);
    }

    #[test]
    fn unreachable_target_rejected() {
        let y = BackoffChain::new(8, 0.4, ChainVariant::AbsorbZeroOne).unwrap();
        assert!(matches!(hitting_time(&y, &[1]), Err(AlmaError::UnreachableTarget(_))));
    }

    #[test]
    fn restart_chain_two_agents_closed_form() {
        // From 2: stay w.p. (1-p)^2, win w.p. 2p(1-p), restart via 0 (one
        // extra step) w.p. p^2. T = (1 + p^2) / (1 - (1-p)^2 - p^2).
        for p in [0.3, 0.5, 0.7] {
            let x = BackoffChain::new(2, p, ChainVariant::Restart).unwrap();
            let t = hitting_time(&x, &[1]).unwrap();
            let expect = (1.0 + p * p) / (2.0 * p * (1.0 - p));
            assert!((t[2] - expect).abs() < 1e-12, "p={p}: {} vs {expect}", t[2]);
            assert!((t[0] - (1.0 + expect)).abs() < 1e-12);
        }
    }

    #[test]
    fn restart_time_scales_like_log_n() {
        let ratios: Vec<f64> = SCALING_SIZES
            .iter()
            .map(|&n| {
                let x = BackoffChain::new(n, 0.5, ChainVariant::Restart).unwrap();
                hitting_time(&x, &[1]).unwrap()[n] / single_resource_scale(n, 0.5)
            })
            .collect();
        let spread = ratios.iter().cloned().fold(0.0, f64::max) / ratios.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread <= 2.0, "{ratios:?}");
    }

    #[test]
    fn mityushin_arithmetic() {
        assert_eq!(mityushin_bound(2.0, 8).unwrap(), 5.0);
        assert_eq!(mityushin_bound(2.0, 1).unwrap(), 2.0);
        assert_eq!(mityushin_bound(2.0, 9).unwrap(), 6.0);
        assert!(mityushin_bound(1.0, 3).is_err());
        assert!(mityushin_bound(0.5, 3).is_err());
    }

    #[test]
    fn mityushin_dominates_zero_absorbing_chain() {
        for k in 1..=9 {
            let p = k as f64 / 10.0;
            let z = BackoffChain::new(50, p, ChainVariant::AbsorbZero).unwrap();
            let t = hitting_time(&z, &[0]).unwrap();
            for i in 1..=50 {
                assert!(t[i] <= mityushin_bound(1.0 / (1.0 - p), i).unwrap() + CEILING_TOL, "p={p} i={i}");
            }
        }
    }

    #[test]
    fn tau_identity() {
        // (2-p)/(2(1-p)) (1/p + 1) = 1/p + 1/(1-p) + 1/2
        for k in 1..100 {
            let p = k as f64 / 100.0;
            let lhs = (2.0 - p) / (2.0 * (1.0 - p)) * (1.0 / p + 1.0);
            let rhs = 1.0 / p + 1.0 / (1.0 - p) + 0.5;
            assert!((lhs - rhs).abs() < 1e-9 * rhs);
        }
    }

    #[test]
    fn loss_star_examples() {
        let policy = BackoffPolicy::linear(0.1).unwrap();
        // Two agents, each with a single resource of utility 0.5: every loss
        // is the last-resource fallback 0.5.
        let flat = MatchingInstance::new(2, 2, vec![vec![(0, 0.5)], vec![(1, 0.5)]]).unwrap();
        let b = compute_loss_star(&flat, &policy).unwrap();
        assert_eq!(b.loss_star, 0.5);
        assert!((b.p_star - 0.5).abs() < 1e-12);

        // Losses {0.05, 0.95}: agent 0 has [1.0, 0.95] (losses 0.05 and 0.95).
        let ext = MatchingInstance::new(1, 2, vec![vec![(0, 1.0), (1, 0.95)]]).unwrap();
        let b = compute_loss_star(&ext, &policy).unwrap();
        assert!((b.loss_star - 0.05).abs() < 1e-12);
        assert!((b.p_star - 0.9).abs() < 1e-12);
        assert!(b.steps_bound > 0.0 && b.per_agent_bound > 0.0);
    }

    #[test]
    fn loss_star_needs_an_agent() {
        let empty = MatchingInstance::new(2, 2, vec![vec![], vec![]]).unwrap();
        assert!(matches!(
            compute_loss_star(&empty, &BackoffPolicy::linear(0.1).unwrap()),
            Err(AlmaError::EmptyInstance)
        ));
    }

    #[test]
    fn per_agent_bound_ignores_unrelated_agents() {
        // Two disjoint sub-systems: adding agents to one leaves the other's
        // bound untouched.
        let policy = BackoffPolicy::linear(0.1).unwrap();
        let small = MatchingInstance::new(2, 2, vec![vec![(0, 0.8)], vec![(1, 0.6), (0, 0.3)]]).unwrap();
        let mut interest = vec![vec![(0, 0.8)], vec![(1, 0.6), (0, 0.3)]];
        interest.extend((0..5).map(|_| vec![(2, 0.4), (3, 0.7)]));
        let big = MatchingInstance::new(7, 4, interest).unwrap();
        assert_eq!(per_agent_bounds(&small, &policy)[0], per_agent_bounds(&big, &policy)[0]);
    }

    #[test]
    fn verification_grid_passes_and_fault_is_caught() {
        let rows = verify_grid(None).unwrap();
        let failing: Vec<_> = rows.iter().filter(|r| !r.pass).collect();
        assert!(failing.is_empty(), "{failing:?}");
        let rows = verify_grid(Some(Fault::HittingProbability(0.01))).unwrap();
        assert!(rows.iter().any(|r| !r.pass && r.check == "single-winner-lower-bound"));
    }
}
