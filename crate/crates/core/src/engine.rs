//! Round-based ALMA simulation.
//!
//! All agents act in the same discrete step. An agent whose strategy points
//! at a resource attempts it; a sole attempter on an unowned resource takes it
//! for good, everybody else on that resource has collided and backs off with
//! the probability its back-off curve assigns to the loss at that position.
//! Agents that yielded in an earlier step probe the next resource of their
//! preference list (cyclically) and switch to it when it looks free.
//!
//! Agents never read each other's utilities: [`AgentState`] only sees its own
//! list and the occupancy of the single resource it touches.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;

use crate::backoff::BackoffPolicy;
use crate::error::{AlmaError, Result};
use crate::instance::{Matching, MatchingInstance};
use crate::rng::{self, Rng};
use crate::theory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Yield,
    Access(usize),
}

/// Feedback from probing a resource. Decisions only use [`Occupancy::is_free`];
/// `Owned` lets a yielded agent recognise that a resource is gone for good.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occupancy {
    Free,
    Busy,
    Owned,
}

impl Occupancy {
    pub fn is_free(self) -> bool {
        self == Occupancy::Free
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Active,
    Won,
    /// Scanned every resource and found all of them owned.
    GaveUp,
    /// Taken as a resource by another agent (dual-role runs only).
    Absorbed,
}

#[derive(Debug, Clone)]
pub struct AgentState {
    prefs: Vec<usize>,
    backoff: Vec<f64>,
    cursor: usize,
    strategy: Strategy,
    status: Status,
    acquired: Option<usize>,
    acquired_at: Option<u64>,
    owned_streak: usize,
}

impl AgentState {
    /// `prefs` must already be in decreasing utility.
    pub fn new(prefs: &[(usize, f64)], policy: &BackoffPolicy) -> Self {
        let utils: Vec<f64> = prefs.iter().map(|p| p.1).collect();
        let backoff = (0..utils.len()).map(|i| policy.probability_at(&utils, i)).collect();
        let strategy = prefs.first().map_or(Strategy::Yield, |p| Strategy::Access(p.0));
        Self {
            prefs: prefs.iter().map(|p| p.0).collect(),
            backoff,
            cursor: 0,
            strategy,
            status: if prefs.is_empty() { Status::GaveUp } else { Status::Active },
            acquired: None,
            acquired_at: None,
            owned_streak: 0,
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn acquired(&self) -> Option<usize> {
        self.acquired
    }

    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }

    fn attempt(&self) -> Option<usize> {
        match (self.status, self.strategy) {
            (Status::Active, Strategy::Access(r)) => Some(r),
            _ => None,
        }
    }

    fn acquire(&mut self, step: u64) {
        if let Strategy::Access(r) = self.strategy {
            self.acquired = Some(r);
            self.acquired_at = Some(step);
            self.status = Status::Won;
        }
    }

    /// Returns whether the agent backed off.
    fn collide(&mut self, rng: &mut Rng) -> bool {
        let p = self.backoff[self.cursor];
        let back_off = rng.random::<f64>() < p;
        if back_off {
            self.strategy = Strategy::Yield;
            self.owned_streak = 0;
        }
        back_off
    }

    /// Probes the next resource in sequence. Returns it and what was seen.
    fn monitor(&mut self, probe: impl Fn(usize) -> Occupancy) -> (usize, Occupancy) {
        self.cursor = (self.cursor + 1) % self.prefs.len();
        let r = self.prefs[self.cursor];
        let seen = probe(r);
        match seen {
            Occupancy::Free => {
                self.strategy = Strategy::Access(r);
                self.owned_streak = 0;
            }
            Occupancy::Busy => self.owned_streak = 0,
            Occupancy::Owned => {
                self.owned_streak += 1;
                if self.owned_streak >= self.prefs.len() {
                    self.status = Status::GaveUp;
                }
            }
        }
        (r, seen)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Attempt,
    Acquire,
    Backoff,
    Monitor,
    Terminate,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Attempt => "attempt",
            TraceKind::Acquire => "acquire",
            TraceKind::Backoff => "backoff",
            TraceKind::Monitor => "monitor",
            TraceKind::Terminate => "terminate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub step: u64,
    pub agent: usize,
    pub kind: TraceKind,
    pub resource: Option<usize>,
}

/// Writes `step,agent,event,resource`.
pub fn write_trace_csv(events: &[TraceEvent], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("step,agent,event,resource\n");
    for e in events {
        let r = e.resource.map(|r| r.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", e.step, e.agent, e.kind.as_str(), r));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| AlmaError::io(path, e))
}

/// Agent `n` is also resource `agent_resource[n]`; taking either side of such
/// an entity takes both. Used when requests play agent and resource at once.
#[derive(Debug, Clone, Default)]
pub struct DualRoles {
    pub agent_resource: Vec<Option<usize>>,
    pub resource_agent: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Maximum number of steps; `None` runs until every agent has settled.
    pub budget: Option<u64>,
    pub trace: bool,
    pub dual_roles: Option<DualRoles>,
}

impl RunOptions {
    pub fn budget(budget: Option<u64>) -> Self {
        Self { budget, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub matching: Matching,
    /// Every agent won, gave up or was absorbed before the run stopped.
    pub converged: bool,
    pub steps_total: u64,
    /// Step at which each agent acquired its resource; `None` for non-winners.
    pub steps_per_agent: Vec<Option<u64>>,
    /// Agent-level collision count (one per colliding agent per step).
    pub collisions_total: u64,
    pub trace: Vec<TraceEvent>,
}

impl RunResult {
    /// Mean acquisition step over winners, or 0 when nobody won.
    pub fn mean_acquisition_step(&self) -> f64 {
        let won: Vec<u64> = self.steps_per_agent.iter().flatten().copied().collect();
        if won.is_empty() {
            0.0
        } else {
            won.iter().sum::<u64>() as f64 / won.len() as f64
        }
    }
}

/// Step cap for unbudgeted runs: 100x the system convergence bound.
pub fn safety_cap(instance: &MatchingInstance, policy: &BackoffPolicy) -> u64 {
    theory::system_bound(instance, policy).map_or(1, |b| (100.0 * b).ceil().clamp(1_000.0, 1e15) as u64)
}

pub fn run(instance: &MatchingInstance, policy: &BackoffPolicy, seed: u64, budget: Option<u64>) -> Result<RunResult> {
    run_with(instance, policy, seed, &RunOptions::budget(budget))
}

pub fn run_with(
    instance: &MatchingInstance,
    policy: &BackoffPolicy,
    seed: u64,
    options: &RunOptions,
) -> Result<RunResult> {
    if options.budget == Some(0) {
        return Err(AlmaError::Config("budget must be >= 1".into()));
    }
    let n_agents = instance.n_agents();
    let n_resources = instance.n_resources();
    if let Some(d) = &options.dual_roles {
        if d.agent_resource.len() != n_agents || d.resource_agent.len() != n_resources {
            return Err(AlmaError::Config("dual-role tables do not match the instance".into()));
        }
    }
    let limit = options.budget.unwrap_or_else(|| safety_cap(instance, policy));

    let mut rng = rng::seeded(seed);
    let mut agents: Vec<AgentState> =
        (0..n_agents).map(|n| AgentState::new(&instance.preferences(n), policy)).collect();
    let mut owned = vec![false; n_resources];
    let mut attempts = vec![0u32; n_resources];
    let mut trace = Vec::new();
    let mut collisions = 0u64;

    if options.trace {
        for (n, a) in agents.iter().enumerate() {
            if !a.is_active() {
                trace.push(TraceEvent { step: 0, agent: n, kind: TraceKind::Terminate, resource: None });
            }
        }
    }

    let mut active: Vec<usize> = (0..n_agents).filter(|&n| agents[n].is_active()).collect();
    let mut step = 0u64;
    let mut attempting = Vec::new();
    let mut yielding = Vec::new();
    let mut touched = Vec::new();

    while !active.is_empty() && step < limit {
        step += 1;
        attempting.clear();
        yielding.clear();
        touched.clear();
        for &n in &active {
            match agents[n].attempt() {
                Some(r) => {
                    attempts[r] += 1;
                    attempting.push(n);
                    touched.push(r);
                }
                None => yielding.push(n),
            }
        }

        for &n in &attempting {
            if !agents[n].is_active() {
                continue; // absorbed earlier in this step
            }
            let Strategy::Access(r) = agents[n].strategy else { unreachable!() };
            if options.trace {
                trace.push(TraceEvent { step, agent: n, kind: TraceKind::Attempt, resource: Some(r) });
            }
            if attempts[r] == 1 && !owned[r] {
                owned[r] = true;
                agents[n].acquire(step);
                if options.trace {
                    trace.push(TraceEvent { step, agent: n, kind: TraceKind::Acquire, resource: Some(r) });
                }
                if let Some(d) = &options.dual_roles {
                    if let Some(own) = d.agent_resource[n] {
                        owned[own] = true;
                    }
                    if let Some(partner) = d.resource_agent[r] {
                        if partner != n && agents[partner].is_active() {
                            agents[partner].status = Status::Absorbed;
                            if let Some(own) = d.agent_resource[partner] {
                                owned[own] = true;
                            }
                            if options.trace {
                                trace.push(TraceEvent {
                                    step,
                                    agent: partner,
                                    kind: TraceKind::Terminate,
                                    resource: Some(r),
                                });
                            }
                        }
                    }
                }
            } else {
                collisions += 1;
                if agents[n].collide(&mut rng) && options.trace {
                    trace.push(TraceEvent { step, agent: n, kind: TraceKind::Backoff, resource: Some(r) });
                }
            }
        }

        for &n in &yielding {
            if !agents[n].is_active() {
                continue;
            }
            let probe = |r: usize| {
                if owned[r] {
                    Occupancy::Owned
                } else if attempts[r] > 0 {
                    Occupancy::Busy
                } else {
                    Occupancy::Free
                }
            };
            let (r, _) = agents[n].monitor(probe);
            if options.trace {
                trace.push(TraceEvent { step, agent: n, kind: TraceKind::Monitor, resource: Some(r) });
                if !agents[n].is_active() {
                    trace.push(TraceEvent { step, agent: n, kind: TraceKind::Terminate, resource: None });
                }
            }
        }

        for &r in &touched {
            attempts[r] = 0;
        }
        active.retain(|&n| agents[n].is_active());
    }

    let matching = Matching::from_assignment(agents.iter().map(|a| a.acquired).collect());
    Ok(RunResult {
        matching,
        converged: active.is_empty(),
        steps_total: step,
        steps_per_agent: agents.iter().map(|a| a.acquired_at).collect(),
        collisions_total: collisions,
        trace,
    })
}

/// `n_runs` independent runs; run `i` uses `derive_seed(master_seed, i)`.
pub fn run_batch(
    instance: &MatchingInstance,
    policy: &BackoffPolicy,
    n_runs: usize,
    master_seed: u64,
    budget: Option<u64>,
) -> Result<Vec<RunResult>> {
    if n_runs == 0 {
        return Err(AlmaError::Config("n_runs must be >= 1".into()));
    }
    (0..n_runs)
        .into_par_iter()
        .map(|i| run(instance, policy, rng::derive_seed(master_seed, i as u64), budget))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::ScenarioConfig;
    use crate::report::social_welfare;

    fn linear() -> BackoffPolicy {
        BackoffPolicy::linear(0.1).unwrap()
    }

    #[test]
    fn disjoint_tops_converge_in_one_step() {
        let inst = MatchingInstance::from_dense(&[vec![0.9, 0.2], vec![0.1, 0.8]]).unwrap();
        let res = run(&inst, &linear(), 3, None).unwrap();
        assert!(res.converged);
        assert_eq!(res.steps_total, 1);
        assert_eq!(res.matching.assignment(), &[Some(0), Some(1)]);
        assert!((social_welfare(&inst, &res.matching).unwrap() - 1.7).abs() < 1e-12);
    }

    #[test]
    fn single_pair_acquired_at_step_one() {
        let inst = MatchingInstance::from_dense(&[vec![0.8]]).unwrap();
        let res = run(&inst, &linear(), 0, None).unwrap();
        assert_eq!(res.steps_per_agent, vec![Some(1)]);
        assert_eq!(res.matching.get(0), Some(0));
    }

    #[test]
    fn empty_interest_terminates_immediately() {
        let inst = MatchingInstance::new(2, 1, vec![vec![], vec![(0, 0.0)]]).unwrap();
        let res = run(&inst, &linear(), 0, None).unwrap();
        assert!(res.converged);
        assert_eq!(res.steps_total, 0);
        assert_eq!(res.matching.cardinality(), 0);
    }

    #[test]
    fn zero_budget_rejected() {
        let inst = MatchingInstance::from_dense(&[vec![0.8]]).unwrap();
        assert!(run(&inst, &linear(), 0, Some(0)).is_err());
    }

    #[test]
    fn two_agents_one_resource_matches_restart_chain() {
        // Both have only the shared resource with utility 1: loss 1, so the
        // linear curve backs off with probability 0.1. The sole survivor of the
        // contest claims the resource one step after the chain absorbs.
        let inst = MatchingInstance::from_dense(&[vec![1.0], vec![1.0]]).unwrap();
        let chain = theory::BackoffChain::new(2, 0.1, theory::ChainVariant::Restart).unwrap();
        let expected = theory::hitting_time(&chain, &[1]).unwrap()[2] + 1.0;
        let runs = run_batch(&inst, &linear(), 10_000, 77, None).unwrap();
        let mean = runs.iter().map(|r| r.steps_total as f64).sum::<f64>() / runs.len() as f64;
        assert!((mean - expected).abs() <= 0.05 * expected, "mean {mean} vs {expected}");
        assert!(runs.iter().all(|r| r.converged && r.matching.cardinality() == 1));
    }

    #[test]
    fn batch_is_deterministic_and_matches_single_runs() {
        let inst = crate::instance::generate(&ScenarioConfig::uniform_random(12, 12, 4)).unwrap();
        let policy = BackoffPolicy::logistic(2.0).unwrap();
        let a = run_batch(&inst, &policy, 5, 99, None).unwrap();
        let b = run_batch(&inst, &policy, 5, 99, None).unwrap();
        assert_eq!(a, b);
        let one = run_batch(&inst, &policy, 1, 99, None).unwrap();
        assert_eq!(one[0], run(&inst, &policy, rng::derive_seed(99, 0), None).unwrap());
        assert_eq!(one[0], a[0]);
    }

    #[test]
    fn trace_respects_ownership_permanence() {
        let inst = crate::instance::generate(&ScenarioConfig::noisy_common(10, 10, 0.05, 2)).unwrap();
        let options = RunOptions { trace: true, ..RunOptions::default() };
        let res = run_with(&inst, &linear(), 5, &options).unwrap();
        assert!(res.converged);
        let mut owner = vec![None; 10];
        let mut owned_count = 0;
        let mut last_step = 0;
        for e in &res.trace {
            assert!(e.step >= last_step);
            if e.step > last_step {
                // monotone occupancy: owned set only grows between steps
                assert!(owner.iter().flatten().count() >= owned_count);
                owned_count = owner.iter().flatten().count();
                last_step = e.step;
            }
            if e.kind == TraceKind::Acquire {
                let r = e.resource.unwrap();
                assert_eq!(owner[r], None, "resource {r} acquired twice");
                owner[r] = Some(e.agent);
            }
        }
        // a winner never shows up again after its acquisition
        for (n, at) in res.steps_per_agent.iter().enumerate() {
            if let Some(at) = at {
                assert!(res.trace.iter().all(|e| e.agent != n || e.step <= *at));
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&res.trace, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,agent,event,resource\n1,"));
    }

    #[test]
    fn yielded_agent_gives_up_after_seeing_everything_owned() {
        // Agents 0 and 1 only want resource 0; whoever loses sees it owned on
        // its single-item cycle and stops.
        let inst = MatchingInstance::from_dense(&[vec![0.5], vec![0.5]]).unwrap();
        for seed in 0..50 {
            let res = run(&inst, &linear(), seed, None).unwrap();
            assert!(res.converged);
            assert_eq!(res.matching.cardinality(), 1);
        }
    }

    #[test]
    fn dual_roles_take_both_sides() {
        // Three requests, each agent and resource at once (resource i is request i).
        // Only request 0 acts as an agent; when it takes request 1, request 1 is
        // gone as agent and request 0 is gone as resource.
        let inst = MatchingInstance::new(2, 3, vec![vec![(1, 1.0), (2, 0.5)], vec![(0, 1.0), (2, 0.2)]]).unwrap();
        let dual = DualRoles { agent_resource: vec![Some(0), Some(1)], resource_agent: vec![Some(0), Some(1), None] };
        let options = RunOptions { dual_roles: Some(dual), ..RunOptions::default() };
        let res = run_with(&inst, &linear(), 1, &options).unwrap();
        assert!(res.converged);
        // Step 1: agent 0 takes resource 1 (request 1), agent 1 takes resource 0
        // (request 0). Agent 0 resolves first and absorbs agent 1.
        assert_eq!(res.matching.assignment(), &[Some(1), None]);
    }

    mod props {
        use super::*;
        use crate::baselines::hungarian_max_weight;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(40))]

            #[test]
            fn runs_are_feasible_and_bounded_by_optimum(n in 1usize..9, r in 1usize..9, seed in any::<u64>(), s in any::<u64>()) {
                let inst = crate::instance::generate(&ScenarioConfig::uniform_random(n, r, seed)).unwrap();
                let res = run(&inst, &linear(), s, None).unwrap();
                prop_assert!(res.converged);
                res.matching.check_feasible(&inst).unwrap();
                let opt = social_welfare(&inst, &hungarian_max_weight(&inst)).unwrap();
                prop_assert!(social_welfare(&inst, &res.matching).unwrap() <= opt + 1e-9);
            }

            #[test]
            fn welfare_grows_with_budget(n in 2usize..20, seed in any::<u64>(), s in any::<u64>(), b1 in 1u64..20, extra in 0u64..20) {
                let inst = crate::instance::generate(&ScenarioConfig::cartesian(n, n, 0.5, None, seed)).unwrap();
                let lo = run(&inst, &linear(), s, Some(b1)).unwrap();
                let hi = run(&inst, &linear(), s, Some(b1 + extra)).unwrap();
                let full = run(&inst, &linear(), s, None).unwrap();
                let (a, b, c) = (
                    social_welfare(&inst, &lo.matching).unwrap(),
                    social_welfare(&inst, &hi.matching).unwrap(),
                    social_welfare(&inst, &full.matching).unwrap(),
                );
                prop_assert!(a <= b && b <= c);
                // budgeted runs are prefixes of the full run
                for (agent, res) in lo.matching.pairs() {
                    prop_assert_eq!(full.matching.get(agent), Some(res));
                }
            }
        }
    }
}
