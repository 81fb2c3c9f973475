//! Minute-by-minute replay of a request stream and the clairvoyant benchmark.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::backoff::BackoffPolicy;
use crate::baselines::{brute_force_max_weight, greedy_by_weight, WeightedEdge};
use crate::engine::{self, DualRoles, RunOptions};
use crate::error::{AlmaError, Result};
use crate::instance::MatchingInstance;
use crate::report::mean;
use crate::rng::{self, Rng};

use super::distance::DistanceProvider;
use super::requests::OnlineRequest;
use super::{Algorithm, OnlineConfig, D_MIN_GRID_KM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Pair,
    Solo,
}

/// Request ids; `b` is set for pairs only.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineEvent {
    pub minute: i64,
    pub kind: EventKind,
    pub a: usize,
    pub b: Option<usize>,
    pub saved_km: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineResult {
    pub sw_km: f64,
    /// Request ids, smaller first.
    pub pairs: Vec<(usize, usize)>,
    pub solo: usize,
    pub events: Vec<OnlineEvent>,
}

/// Current requests at one dispatch: who is critical and which pairs may be
/// matched (0 = not allowed).
#[derive(Debug, Clone, PartialEq)]
pub struct PoolGraph {
    pub critical: Vec<bool>,
    pub weight: Vec<Vec<f64>>,
}

impl PoolGraph {
    pub fn len(&self) -> usize {
        self.critical.len()
    }

    pub fn is_empty(&self) -> bool {
        self.critical.is_empty()
    }

    fn edges(&self) -> Vec<WeightedEdge> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                if self.weight[i][j] > 0.0 {
                    out.push(WeightedEdge::new(i, j, self.weight[i][j]));
                }
            }
        }
        out
    }
}

/// Critical requests are agents, every current request is a resource, and
/// taking a request in either role removes it from both.
pub fn dispatch_alma(graph: &PoolGraph, policy: &BackoffPolicy, seed: u64) -> Result<Vec<(usize, usize)>> {
    let critical: Vec<usize> = (0..graph.len()).filter(|&i| graph.critical[i]).collect();
    let top = graph.weight.iter().flatten().copied().fold(0.0, f64::max);
    if critical.is_empty() || !(top > 0.0) {
        return Ok(Vec::new());
    }
    let interest = critical
        .iter()
        .map(|&c| {
            (0..graph.len())
                .filter(|&j| j != c && graph.weight[c][j] > 0.0)
                .map(|j| (j, graph.weight[c][j] / top))
                .collect()
        })
        .collect();
    let instance = MatchingInstance::new(critical.len(), graph.len(), interest)?;
    let mut resource_agent = vec![None; graph.len()];
    for (a, &c) in critical.iter().enumerate() {
        resource_agent[c] = Some(a);
    }
    let options = RunOptions {
        budget: None,
        trace: false,
        dual_roles: Some(DualRoles { agent_resource: critical.iter().map(|&c| Some(c)).collect(), resource_agent }),
    };
    let result = engine::run_with(&instance, policy, seed, &options)?;
    Ok(result.matching.pairs().map(|(a, r)| (critical[a], r)).collect())
}

/// Exact maximum-weight matching of the pool (just-in-time and batching).
pub fn dispatch_max_weight(graph: &PoolGraph) -> Result<Vec<(usize, usize)>> {
    Ok(brute_force_max_weight(&graph.edges(), false)?.pairs)
}

/// Heaviest disjoint pairs first, ties in random order.
pub fn dispatch_greedy(graph: &PoolGraph, rng: &mut Rng) -> Vec<(usize, usize)> {
    greedy_by_weight(&graph.edges(), rng).pairs
}

struct Cache<'a> {
    requests: &'a [OnlineRequest],
    provider: &'a dyn DistanceProvider,
    saved: HashMap<(usize, usize), f64>,
}

impl Cache<'_> {
    fn get(&mut self, i: usize, j: usize) -> Result<f64> {
        let key = (i.min(j), i.max(j));
        if let Some(&v) = self.saved.get(&key) {
            return Ok(v);
        }
        let v = self.provider.saved(&self.requests[key.0], &self.requests[key.1])?;
        self.saved.insert(key, v);
        Ok(v)
    }
}

fn check_stream(requests: &[OnlineRequest]) -> Result<()> {
    if requests.windows(2).any(|w| w[0].arrival > w[1].arrival) {
        return Err(AlmaError::Config("requests must be sorted by arrival".into()));
    }
    let mut ids: Vec<usize> = requests.iter().map(|r| r.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(AlmaError::Config("request ids must be unique".into()));
    }
    if let Some(r) = requests.iter().find(|r| r.deadline < r.arrival) {
        return Err(AlmaError::Config(format!("request {} turns critical before it arrives", r.id)));
    }
    Ok(())
}

/// Replays `requests` minute by minute. A request is current from its
/// arrival through its deadline; unmatched requests leave alone at the end
/// of their deadline minute (or after any greedy batch).
pub fn simulate_online(
    requests: &[OnlineRequest],
    config: &OnlineConfig,
    provider: &dyn DistanceProvider,
    policy: &BackoffPolicy,
    seed: u64,
) -> Result<OnlineResult> {
    config.validate()?;
    check_stream(requests)?;
    let mut out = OnlineResult { sw_km: 0.0, pairs: Vec::new(), solo: 0, events: Vec::new() };
    if requests.is_empty() {
        return Ok(out);
    }
    let mut cache = Cache { requests, provider, saved: HashMap::new() };
    let mut greedy_rng = rng::seeded(seed);
    let mut pool: Vec<usize> = Vec::new();
    let mut next = 0usize;
    let mut t = requests[0].arrival;
    let end = requests.iter().map(|r| r.deadline).max().unwrap_or(t);

    while t <= end {
        while next < requests.len() && requests[next].arrival <= t {
            pool.push(next);
            next += 1;
        }
        if pool.is_empty() {
            match requests.get(next) {
                Some(r) => {
                    t = r.arrival;
                    continue;
                }
                None => break,
            }
        }

        let critical: Vec<bool> = pool.iter().map(|&i| requests[i].deadline == t).collect();
        let fire = match config.algorithm {
            Algorithm::Alma | Algorithm::JitMwm => critical.iter().any(|&c| c),
            Algorithm::Bmwm(x) | Algorithm::Bg(x) => t.rem_euclid(x) == 0,
        };
        if fire {
            let n = pool.len();
            let mut weight = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i + 1..n {
                    let w = cache.get(pool[i], pool[j])?;
                    let filtered = config.d_min.is_some_and(|d| w < d) && !critical[i] && !critical[j];
                    if w > 0.0 && !filtered {
                        weight[i][j] = w;
                        weight[j][i] = w;
                    }
                }
            }
            let graph = PoolGraph { critical: critical.clone(), weight };
            let local = match config.algorithm {
                Algorithm::Alma => dispatch_alma(&graph, policy, rng::derive_seed(seed, t as u64))?,
                Algorithm::JitMwm | Algorithm::Bmwm(_) => dispatch_max_weight(&graph)?,
                Algorithm::Bg(_) => dispatch_greedy(&graph, &mut greedy_rng),
            };
            let mut taken = vec![false; n];
            for (i, j) in local {
                if i == j || taken[i] || taken[j] {
                    return Err(AlmaError::Infeasible(format!("request matched twice at minute {t}")));
                }
                taken[i] = true;
                taken[j] = true;
                let (a, b) = (requests[pool[i]].id, requests[pool[j]].id);
                let (a, b) = (a.min(b), a.max(b));
                let km = graph.weight[i][j];
                out.sw_km += km;
                out.pairs.push((a, b));
                out.events.push(OnlineEvent { minute: t, kind: EventKind::Pair, a, b: Some(b), saved_km: km });
            }
            let leave_all = matches!(config.algorithm, Algorithm::Bg(_));
            let mut kept = Vec::with_capacity(n);
            for (x, &i) in pool.iter().enumerate() {
                if taken[x] {
                    continue;
                }
                if leave_all {
                    out.solo += 1;
                    out.events.push(OnlineEvent {
                        minute: t,
                        kind: EventKind::Solo,
                        a: requests[i].id,
                        b: None,
                        saved_km: 0.0,
                    });
                } else {
                    kept.push(i);
                }
            }
            pool = kept;
        }

        pool.retain(|&i| {
            if requests[i].deadline == t {
                out.solo += 1;
                out.events.push(OnlineEvent { minute: t, kind: EventKind::Solo, a: requests[i].id, b: None, saved_km: 0.0 });
                false
            } else {
                true
            }
        });
        t += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineOptimum {
    /// Request ids, smaller first.
    pub pairs: Vec<(usize, usize)>,
    pub sw_km: f64,
}

/// Best pairing with full knowledge of the stream: any two requests whose
/// waiting windows intersect may share.
pub fn clairvoyant_offline(requests: &[OnlineRequest], provider: &dyn DistanceProvider) -> Result<OfflineOptimum> {
    let mut edges = Vec::new();
    for i in 0..requests.len() {
        for j in i + 1..requests.len() {
            if requests[i].overlaps(&requests[j]) {
                let w = provider.saved(&requests[i], &requests[j])?;
                if w > 0.0 {
                    edges.push(WeightedEdge::new(i, j, w));
                }
            }
        }
    }
    let m = brute_force_max_weight(&edges, false)?;
    let mut pairs: Vec<(usize, usize)> = m
        .pairs
        .iter()
        .map(|&(i, j)| {
            let (a, b) = (requests[i].id, requests[j].id);
            (a.min(b), a.max(b))
        })
        .collect();
    pairs.sort_unstable();
    Ok(OfflineOptimum { pairs, sw_km: m.weight })
}

pub fn competitive_ratio(online_km: f64, offline_km: f64) -> Result<f64> {
    if !(offline_km > 0.0) {
        return Err(AlmaError::ZeroOptimal);
    }
    Ok(online_km / offline_km)
}

/// Competitive ratio per day; day `i` is replayed with `derive_seed(seed, i)`.
pub fn day_ratios(
    days: &[Vec<OnlineRequest>],
    optima: &[f64],
    config: &OnlineConfig,
    provider: &dyn DistanceProvider,
    policy: &BackoffPolicy,
    seed: u64,
) -> Result<Vec<f64>> {
    if days.len() != optima.len() {
        return Err(AlmaError::Config("one optimum per day required".into()));
    }
    days.par_iter()
        .zip(optima.par_iter())
        .enumerate()
        .map(|(i, (day, &opt))| {
            let res = simulate_online(day, config, provider, policy, rng::derive_seed(seed, i as u64))?;
            competitive_ratio(res.sw_km, opt)
        })
        .collect()
}

/// Threshold from the grid with the best mean ratio (first on ties), with
/// its per-day ratios.
pub fn best_over_d_min(
    days: &[Vec<OnlineRequest>],
    optima: &[f64],
    config: &OnlineConfig,
    provider: &dyn DistanceProvider,
    policy: &BackoffPolicy,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for d in D_MIN_GRID_KM {
        let ratios = day_ratios(days, optima, &config.with_d_min(d), provider, policy, seed)?;
        if best.as_ref().is_none_or(|(_, b)| mean(&ratios) > mean(b)) {
            best = Some((d, ratios));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::online::distance::{GeoPoint, ManhattanGrid};
    use crate::online::requests::{SyntheticDay, WaitRule};

    fn linear() -> BackoffPolicy {
        BackoffPolicy::linear(0.1).unwrap()
    }

    fn all_algorithms() -> [Algorithm; 6] {
        [Algorithm::Alma, Algorithm::JitMwm, Algorithm::Bmwm(1), Algorithm::Bmwm(3), Algorithm::Bg(1), Algorithm::Bg(2)]
    }

    /// Saved distances come straight from a table keyed by id.
    fn table(n: usize, entries: &[(usize, usize, f64)]) -> crate::online::DistanceMatrix {
        let mut m = crate::online::DistanceMatrix::new(n);
        for i in 0..n {
            for j in i + 1..n {
                m.insert(i, j, 0.0).unwrap();
            }
        }
        for &(i, j, km) in entries {
            m.insert(i, j, km).unwrap();
        }
        m
    }

    fn at(id: usize, arrival: i64, deadline: i64) -> OnlineRequest {
        let p = GeoPoint::new(0.0, 0.0);
        OnlineRequest { id, arrival, trip_len: 10, pickup: p, dropoff: p, deadline }
    }

    fn trip(id: usize, arrival: i64) -> OnlineRequest {
        let w = WaitRule::default();
        OnlineRequest::new(id, arrival, 20, GeoPoint::new(40.75, -73.99), GeoPoint::new(40.78, -73.96), &w).unwrap()
    }

    #[test]
    fn identical_simultaneous_requests_pair_up() {
        let reqs = [trip(0, 100), trip(1, 100)];
        let km = crate::online::distance::trip_km(&ManhattanGrid, &reqs[0]);
        for alg in all_algorithms() {
            let res = simulate_online(&reqs, &OnlineConfig::new(alg), &ManhattanGrid, &linear(), 1).unwrap();
            assert_eq!(res.pairs, vec![(0, 1)], "{alg}");
            assert!((res.sw_km - km).abs() < 1e-9, "{alg}");
            assert_eq!(res.solo, 0);
        }
    }

    #[test]
    fn lone_request_rides_solo() {
        for alg in all_algorithms() {
            let res = simulate_online(&[trip(0, 7)], &OnlineConfig::new(alg), &ManhattanGrid, &linear(), 1).unwrap();
            assert_eq!(res.sw_km, 0.0);
            assert_eq!(res.solo, 1);
            assert!(res.pairs.is_empty());
        }
    }

    #[test]
    fn empty_stream() {
        let res = simulate_online(&[], &OnlineConfig::new(Algorithm::Alma), &ManhattanGrid, &linear(), 1).unwrap();
        assert_eq!(res.sw_km, 0.0);
        assert!(res.events.is_empty());
    }

    #[test]
    fn unsorted_stream_is_rejected() {
        let reqs = [trip(0, 5), trip(1, 3)];
        assert!(simulate_online(&reqs, &OnlineConfig::new(Algorithm::Alma), &ManhattanGrid, &linear(), 1).is_err());
    }

    #[test]
    fn alma_dispatch_edge_cases() {
        let none = PoolGraph { critical: vec![false, false], weight: vec![vec![0.0, 1.0], vec![1.0, 0.0]] };
        assert!(dispatch_alma(&none, &linear(), 0).unwrap().is_empty());
        let one = PoolGraph { critical: vec![true, false], weight: none.weight.clone() };
        assert_eq!(dispatch_alma(&one, &linear(), 0).unwrap(), vec![(0, 1)]);
    }

    #[test]
    fn greedy_batch_drops_unmatched_open_requests() {
        // 0 and 1 share at minute 10; 2 is alone then and must not reappear
        // when 3 arrives one minute later.
        let reqs = [at(0, 10, 13), at(1, 10, 13), at(2, 10, 13), at(3, 11, 13)];
        let m = table(4, &[(0, 1, 3.0), (0, 2, 1.0), (2, 3, 5.0)]);
        let res = simulate_online(&reqs, &OnlineConfig::new(Algorithm::Bg(1)), &m, &linear(), 4).unwrap();
        assert_eq!(res.pairs, vec![(0, 1)]);
        assert!(res.events.iter().any(|e| e.kind == EventKind::Solo && e.a == 2 && e.minute == 10));
        assert_eq!(res.solo, 2);
        // batching matching keeps 2 waiting and pairs it with 3
        let res = simulate_online(&reqs, &OnlineConfig::new(Algorithm::Bmwm(1)), &m, &linear(), 4).unwrap();
        assert_eq!(res.pairs, vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn greedy_loses_to_matching_on_crossed_pairs() {
        // Heavy middle edge 1-2 blocks the two outer edges.
        let reqs = [at(0, 0, 2), at(1, 0, 2), at(2, 0, 2), at(3, 0, 2)];
        let m = table(4, &[(1, 2, 1.0), (0, 1, 0.9), (2, 3, 0.9), (0, 3, 0.0)]);
        let greedy = simulate_online(&reqs, &OnlineConfig::new(Algorithm::Bg(1)), &m, &linear(), 0).unwrap();
        let batch = simulate_online(&reqs, &OnlineConfig::new(Algorithm::Bmwm(1)), &m, &linear(), 0).unwrap();
        assert!((greedy.sw_km - 1.0).abs() < 1e-12);
        assert!((batch.sw_km - 1.8).abs() < 1e-12);
        let opt = clairvoyant_offline(&reqs, &m).unwrap();
        assert!((opt.sw_km - 1.8).abs() < 1e-12);
    }

    #[test]
    fn clairvoyant_respects_time_windows() {
        let reqs = [at(0, 0, 2), at(1, 3, 5)];
        let m = table(2, &[(0, 1, 4.0)]);
        let opt = clairvoyant_offline(&reqs, &m).unwrap();
        assert!(opt.pairs.is_empty());
        assert_eq!(opt.sw_km, 0.0);
        assert!(matches!(competitive_ratio(0.0, opt.sw_km), Err(AlmaError::ZeroOptimal)));
    }

    #[test]
    fn clairvoyant_without_binding_windows_is_plain_matching() {
        let reqs: Vec<_> = (0..6).map(|i| at(i, 0, 5)).collect();
        let entries = [(0, 1, 1.0), (1, 2, 2.0), (2, 3, 0.5), (3, 4, 1.5), (4, 5, 0.2), (0, 5, 0.7), (1, 4, 0.9)];
        let m = table(6, &entries);
        let edges: Vec<_> = entries.iter().map(|&(i, j, w)| WeightedEdge::new(i, j, w)).collect();
        let direct = brute_force_max_weight(&edges, false).unwrap();
        assert_eq!(clairvoyant_offline(&reqs, &m).unwrap().sw_km, direct.weight);
    }

    #[test]
    fn crafted_schedule_online_never_beats_offline() {
        let reqs = [at(0, 0, 2), at(1, 1, 3), at(2, 2, 3), at(3, 3, 6), at(4, 4, 5), at(5, 5, 7)];
        let m = table(
            6,
            &[(0, 1, 1.0), (0, 2, 2.5), (1, 2, 0.4), (1, 3, 3.0), (2, 3, 1.2), (3, 4, 0.8), (3, 5, 2.0), (4, 5, 1.1)],
        );
        let opt = clairvoyant_offline(&reqs, &m).unwrap();
        // 0-2 (2.5) + 1-3 (3.0) + 4-5 (1.1)
        assert!((opt.sw_km - 6.6).abs() < 1e-12);
        for alg in all_algorithms() {
            for seed in 0..20 {
                let res = simulate_online(&reqs, &OnlineConfig::new(alg), &m, &linear(), seed).unwrap();
                assert!(res.sw_km <= opt.sw_km + 1e-12, "{alg}");
            }
        }
    }

    #[test]
    fn filter_keeps_critical_pairs() {
        // Weak pair: skipped while both are open, taken once one turns critical.
        let reqs = [at(0, 0, 3), at(1, 0, 5)];
        let m = table(2, &[(0, 1, 0.3)]);
        let cfg = OnlineConfig::new(Algorithm::Bmwm(1)).with_d_min(1.0);
        let res = simulate_online(&reqs, &cfg, &m, &linear(), 0).unwrap();
        assert_eq!(res.events[0].minute, 3);
        assert_eq!(res.pairs, vec![(0, 1)]);
    }

    #[test]
    fn three_way_contest_matches_closed_form() {
        // Requests 0 and 1 are critical, 2 is open. Both critical requests
        // want 2 first. Normalized: 0 values [2: 1.0, 1: 0.5] (loss 0.5, back-off
        // 0.5); 1 values [2: 0.8, 0: 0.5] (loss 0.3, back-off 0.7). Whoever
        // stays while the other backs off takes 2; if both back off they pair.
        let graph = PoolGraph {
            critical: vec![true, true, false],
            weight: vec![vec![0.0, 0.5, 1.0], vec![0.5, 0.0, 0.8], vec![1.0, 0.8, 0.0]],
        };
        let (p0, p1) = (0.5, 0.7);
        let z = 1.0 - (1.0 - p0) * (1.0 - p1);
        let expected = [p1 * (1.0 - p0) / z, p0 * (1.0 - p1) / z, p0 * p1 / z]; // 0-2, 1-2, 0-1
        let runs = 10_000;
        let mut counts = [0usize; 3];
        for seed in 0..runs {
            let mut pairs = dispatch_alma(&graph, &linear(), seed).unwrap();
            assert_eq!(pairs.len(), 1, "exactly one pair, one solo");
            let (a, b) = pairs.pop().unwrap();
            let key = (a.min(b), a.max(b));
            let idx = match key {
                (0, 2) => 0,
                (1, 2) => 1,
                (0, 1) => 2,
                other => panic!("unexpected pair {other:?}"),
            };
            counts[idx] += 1;
        }
        let chi2: f64 = (0..3)
            .map(|k| {
                let e = expected[k] * runs as f64;
                (counts[k] as f64 - e).powi(2) / e
            })
            .sum();
        // 2 degrees of freedom, p = 0.001
        assert!(chi2 < 13.82, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn stream_invariants_hold_on_synthetic_days() {
        let w = WaitRule::default();
        for day_seed in 0..4 {
            let day = SyntheticDay { n_requests: 60, ..SyntheticDay::default() }.generate(&w, day_seed).unwrap();
            let opt = clairvoyant_offline(&day, &ManhattanGrid).unwrap();
            let by_id: HashMap<usize, &OnlineRequest> = day.iter().map(|r| (r.id, r)).collect();
            for alg in all_algorithms() {
                for d in [None, Some(1.0)] {
                    let cfg = OnlineConfig { d_min: d, ..OnlineConfig::new(alg) };
                    let res = simulate_online(&day, &cfg, &ManhattanGrid, &linear(), 9).unwrap();
                    assert!(res.sw_km <= opt.sw_km + 1e-9, "{alg}");
                    let mut seen = std::collections::HashSet::new();
                    for e in &res.events {
                        for id in std::iter::once(e.a).chain(e.b) {
                            assert!(seen.insert(id), "request {id} handled twice");
                            let r = by_id[&id];
                            assert!(r.arrival <= e.minute && e.minute <= r.deadline);
                        }
                    }
                    assert_eq!(seen.len(), day.len());
                    assert_eq!(2 * res.pairs.len() + res.solo, day.len());
                }
            }
        }
    }

    #[test]
    fn zero_threshold_equals_no_filter() {
        let w = WaitRule::default();
        let day = SyntheticDay { n_requests: 60, ..SyntheticDay::default() }.generate(&w, 3).unwrap();
        for alg in all_algorithms() {
            let off = simulate_online(&day, &OnlineConfig::new(alg), &ManhattanGrid, &linear(), 2).unwrap();
            let zero =
                simulate_online(&day, &OnlineConfig::new(alg).with_d_min(0.0), &ManhattanGrid, &linear(), 2).unwrap();
            assert_eq!(off, zero, "{alg}");
            let again = simulate_online(&day, &OnlineConfig::new(alg), &ManhattanGrid, &linear(), 2).unwrap();
            assert_eq!(off, again);
        }
    }
}
