//! Matching instances, the `alma-instance v1` text format and the synthetic
//! scenario generators (noisy common preferences, uniform random utilities and
//! the Cartesian map with Manhattan distances).

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{AlmaError, Result};
use crate::rng;

/// Bipartite utility structure: agent `n` is interested in the resources of
/// `interest[n]`, each with a utility in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingInstance {
    n_agents: usize,
    n_resources: usize,
    interest: Vec<Vec<(usize, f64)>>,
}

impl MatchingInstance {
    /// Validates and canonicalizes (each interest list sorted by resource id).
    pub fn new(n_agents: usize, n_resources: usize, mut interest: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if interest.len() != n_agents {
            return Err(AlmaError::Config(format!(
                "{} interest lists for {} agents",
                interest.len(),
                n_agents
            )));
        }
        for (n, list) in interest.iter_mut().enumerate() {
            list.sort_by_key(|&(r, _)| r);
            for w in list.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(AlmaError::Config(format!("agent {n} lists resource {} twice", w[0].0)));
                }
            }
            for &(r, u) in list.iter() {
                if r >= n_resources {
                    return Err(AlmaError::Index(format!("agent {n}: resource {r} >= R={n_resources}")));
                }
                if !(0.0..=1.0).contains(&u) {
                    return Err(AlmaError::Config(format!("agent {n}, resource {r}: utility {u} outside [0, 1]")));
                }
            }
        }
        Ok(Self { n_agents, n_resources, interest })
    }

    /// Full interest from a dense row-major utility table (`rows[n][r]`).
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n_resources = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != n_resources) {
            return Err(AlmaError::Config("ragged utility table".into()));
        }
        let interest = rows.iter().map(|row| row.iter().copied().enumerate().collect()).collect();
        Self::new(rows.len(), n_resources, interest)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_resources(&self) -> usize {
        self.n_resources
    }

    pub fn interest(&self, agent: usize) -> &[(usize, f64)] {
        &self.interest[agent]
    }

    pub fn utility(&self, agent: usize, resource: usize) -> Option<f64> {
        let list = self.interest.get(agent)?;
        list.binary_search_by_key(&resource, |&(r, _)| r).ok().map(|i| list[i].1)
    }

    /// Positive-utility resources of `agent` in decreasing utility, ties by
    /// ascending resource id.
    pub fn preferences(&self, agent: usize) -> Vec<(usize, f64)> {
        let mut prefs: Vec<(usize, f64)> = self.interest[agent].iter().copied().filter(|e| e.1 > 0.0).collect();
        prefs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        prefs
    }

    /// All `(agent, resource, utility)` edges, agent-major.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.interest
            .iter()
            .enumerate()
            .flat_map(|(n, list)| list.iter().map(move |&(r, u)| (n, r, u)))
    }

    pub fn n_edges(&self) -> usize {
        self.interest.iter().map(Vec::len).sum()
    }

    /// Number of agents interested in each resource.
    pub fn resource_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_resources];
        for (_, r, _) in self.edges() {
            deg[r] += 1;
        }
        deg
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("alma-instance v1 N={} R={}\n", self.n_agents, self.n_resources);
        for (n, r, u) in self.edges() {
            // `{}` on f64 prints the shortest representation that round-trips.
            writeln!(out, "{n} {r} {u}").unwrap();
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| AlmaError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AlmaError::io(path, e))?;
        text.parse()
    }
}

impl FromStr for MatchingInstance {
    type Err = AlmaError;

    fn from_str(text: &str) -> Result<Self> {
        let mut header: Option<(usize, usize)> = None;
        let mut interest: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut seen = std::collections::HashSet::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((n_agents, n_resources)) = header else {
                header = Some(parse_header(line).ok_or_else(|| {
                    AlmaError::parse(line_no, "expected header `alma-instance v1 N=<int> R=<int>`")
                })?);
                interest = vec![Vec::new(); header.unwrap().0];
                continue;
            };

            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(AlmaError::parse(line_no, format!("expected `n r u`, found {} fields", fields.len())));
            }
            let n: usize = fields[0]
                .parse()
                .map_err(|_| AlmaError::parse(line_no, format!("bad agent id `{}`", fields[0])))?;
            let r: usize = fields[1]
                .parse()
                .map_err(|_| AlmaError::parse(line_no, format!("bad resource id `{}`", fields[1])))?;
            let u: f64 = fields[2]
                .parse()
                .map_err(|_| AlmaError::parse(line_no, format!("bad utility `{}`", fields[2])))?;
            if n >= n_agents {
                return Err(AlmaError::parse(line_no, format!("agent {n} out of range (N={n_agents})")));
            }
            if r >= n_resources {
                return Err(AlmaError::parse(line_no, format!("resource {r} out of range (R={n_resources})")));
            }
            if !u.is_finite() || !(0.0..=1.0).contains(&u) {
                return Err(AlmaError::parse(line_no, format!("utility {u} outside [0, 1]")));
            }
            if !seen.insert((n, r)) {
                return Err(AlmaError::parse(line_no, format!("duplicate edge ({n}, {r})")));
            }
            interest[n].push((r, u));
        }

        let (n_agents, n_resources) = header.ok_or_else(|| AlmaError::parse(1, "missing header"))?;
        MatchingInstance::new(n_agents, n_resources, interest)
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut parts = line.split_whitespace();
    if parts.next()? != "alma-instance" || parts.next()? != "v1" {
        return None;
    }
    let n = parts.next()?.strip_prefix("N=")?.parse().ok()?;
    let r = parts.next()?.strip_prefix("R=")?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((n, r))
}

/// Partial assignment of agents to resources; `assignment[n] = Some(r)` is
/// the indicator x_{n,r} = 1.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Matching {
    assignment: Vec<Option<usize>>,
}

impl Matching {
    pub fn empty(n_agents: usize) -> Self {
        Self { assignment: vec![None; n_agents] }
    }

    pub fn from_assignment(assignment: Vec<Option<usize>>) -> Self {
        Self { assignment }
    }

    pub fn assign(&mut self, agent: usize, resource: usize) {
        self.assignment[agent] = Some(resource);
    }

    pub fn get(&self, agent: usize) -> Option<usize> {
        self.assignment.get(agent).copied().flatten()
    }

    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assignment
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignment.iter().enumerate().filter_map(|(n, r)| r.map(|r| (n, r)))
    }

    pub fn cardinality(&self) -> usize {
        self.assignment.iter().flatten().count()
    }

    /// At-most-one on both sides, and every pair is a positive-utility edge.
    pub fn check_feasible(&self, instance: &MatchingInstance) -> Result<()> {
        if self.assignment.len() != instance.n_agents() {
            return Err(AlmaError::Infeasible(format!(
                "matching covers {} agents, instance has {}",
                self.assignment.len(),
                instance.n_agents()
            )));
        }
        let mut taken = vec![false; instance.n_resources()];
        for (n, r) in self.pairs() {
            if r >= taken.len() {
                return Err(AlmaError::Infeasible(format!("resource {r} out of range")));
            }
            if std::mem::replace(&mut taken[r], true) {
                return Err(AlmaError::Infeasible(format!("resource {r} assigned twice")));
            }
            match instance.utility(n, r) {
                Some(u) if u > 0.0 => {}
                _ => return Err(AlmaError::Infeasible(format!("({n}, {r}) is not a positive-utility edge"))),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    NoisyCommon,
    UniformRandom,
    CartesianMap,
}

impl FromStr for ScenarioKind {
    type Err = AlmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noisy" | "noisy-common" => Ok(Self::NoisyCommon),
            "uar" | "uniform-random" => Ok(Self::UniformRandom),
            "cartesian" | "cartesian-map" => Ok(Self::CartesianMap),
            other => Err(AlmaError::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::NoisyCommon => "noisy-common",
            Self::UniformRandom => "uniform-random",
            Self::CartesianMap => "cartesian-map",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub n_agents: usize,
    pub n_resources: usize,
    /// Standard deviation of the Gaussian preference noise (noisy-common).
    pub sigma: f64,
    /// Cut-off as a fraction of `2 * grid_side` (cartesian-map).
    pub cutoff: f64,
    pub bound_rn: Option<usize>,
    pub bound_nr: Option<usize>,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn noisy_common(n: usize, r: usize, sigma: f64, seed: u64) -> Self {
        Self { sigma, ..Self::base(ScenarioKind::NoisyCommon, n, r, seed) }
    }

    pub fn uniform_random(n: usize, r: usize, seed: u64) -> Self {
        Self::base(ScenarioKind::UniformRandom, n, r, seed)
    }

    /// Cartesian map; `bound` sets R^n = N^r.
    pub fn cartesian(n: usize, r: usize, cutoff: f64, bound: Option<usize>, seed: u64) -> Self {
        Self { cutoff, bound_rn: bound, bound_nr: bound, ..Self::base(ScenarioKind::CartesianMap, n, r, seed) }
    }

    fn base(kind: ScenarioKind, n: usize, r: usize, seed: u64) -> Self {
        Self { kind, n_agents: n, n_resources: r, sigma: 0.0, cutoff: 1.0, bound_rn: None, bound_nr: None, seed }
    }

    /// Smallest side `s` with `s * s >= 4 * N`, i.e. ceil(sqrt(4N)).
    pub fn grid_side(&self) -> u64 {
        let target = 4 * self.n_agents as u64;
        let mut s = (target as f64).sqrt() as u64;
        while s * s < target {
            s += 1;
        }
        while s > 0 && (s - 1) * (s - 1) >= target {
            s -= 1;
        }
        s.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ScenarioKind::NoisyCommon if !(self.sigma >= 0.0 && self.sigma.is_finite()) => {
                Err(AlmaError::Config(format!("sigma must be >= 0, got {}", self.sigma)))
            }
            ScenarioKind::CartesianMap if !(self.cutoff > 0.0 && self.cutoff <= 1.0) => {
                Err(AlmaError::Config(format!("cutoff must be in (0, 1], got {}", self.cutoff)))
            }
            ScenarioKind::CartesianMap
                if self.bound_rn.is_some() && self.bound_nr.is_some() && self.bound_rn != self.bound_nr =>
            {
                Err(AlmaError::Config("bound_Rn and bound_Nr must be equal".into()))
            }
            ScenarioKind::CartesianMap if self.bound_rn == Some(0) || self.bound_nr == Some(0) => {
                Err(AlmaError::Config("bounds must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

pub fn generate(config: &ScenarioConfig) -> Result<MatchingInstance> {
    match config.kind {
        ScenarioKind::NoisyCommon => generate_noisy_common(config),
        ScenarioKind::UniformRandom => generate_uniform_random(config),
        ScenarioKind::CartesianMap => generate_cartesian(config),
    }
}

fn expect_kind(config: &ScenarioConfig, kind: ScenarioKind) -> Result<()> {
    if config.kind != kind {
        return Err(AlmaError::Config(format!("expected a {} config, got {}", kind.name(), config.kind.name())));
    }
    config.validate()
}

/// One uniform base utility per resource, then agent-major Gaussian noise,
/// clamped to `[0, 1]`. Every agent is interested in every resource.
pub fn generate_noisy_common(config: &ScenarioConfig) -> Result<MatchingInstance> {
    expect_kind(config, ScenarioKind::NoisyCommon)?;
    Ok(noisy_common_parts(config)?.1)
}

pub(crate) fn noisy_common_parts(config: &ScenarioConfig) -> Result<(Vec<f64>, MatchingInstance)> {
    let mut rng = rng::seeded(config.seed);
    let base: Vec<f64> = (0..config.n_resources).map(|_| rng.random::<f64>()).collect();
    let noise = Normal::new(0.0, config.sigma).map_err(|e| AlmaError::Config(e.to_string()))?;
    let interest = (0..config.n_agents)
        .map(|_| {
            base.iter()
                .enumerate()
                .map(|(r, &b)| (r, (b + noise.sample(&mut rng)).clamp(0.0, 1.0)))
                .collect()
        })
        .collect();
    let instance = MatchingInstance::new(config.n_agents, config.n_resources, interest)?;
    Ok((base, instance))
}

pub fn generate_uniform_random(config: &ScenarioConfig) -> Result<MatchingInstance> {
    expect_kind(config, ScenarioKind::UniformRandom)?;
    let mut rng = rng::seeded(config.seed);
    let interest = (0..config.n_agents)
        .map(|_| (0..config.n_resources).map(|r| (r, rng.random::<f64>())).collect())
        .collect();
    MatchingInstance::new(config.n_agents, config.n_resources, interest)
}

pub type GridPoint = (i64, i64);

/// Agents then resources are placed uniformly on the `grid_side` square.
pub fn generate_cartesian(config: &ScenarioConfig) -> Result<MatchingInstance> {
    expect_kind(config, ScenarioKind::CartesianMap)?;
    let side = config.grid_side() as i64;
    let mut rng = rng::seeded(config.seed);
    let mut place = |count: usize| -> Vec<GridPoint> {
        (0..count).map(|_| (rng.random_range(0..side), rng.random_range(0..side))).collect()
    };
    let agents = place(config.n_agents);
    let resources = place(config.n_resources);
    let max_distance = config.cutoff * 2.0 * side as f64;
    cartesian_from_positions(&agents, &resources, Some(max_distance), config.bound_rn, config.bound_nr)
}

/// Builds the Cartesian-map instance from explicit positions.
///
/// Utility is `1 / d` for Manhattan distance `d` (a distance of zero counts
/// as one). Pairs farther than `max_distance` are dropped. With bounds, each
/// agent first keeps its `bound_rn` nearest resources, then each resource
/// keeps its `bound_nr` nearest remaining agents; ties go to the lower id.
/// Utilities are finally divided by the largest remaining one.
pub fn cartesian_from_positions(
    agents: &[GridPoint],
    resources: &[GridPoint],
    max_distance: Option<f64>,
    bound_rn: Option<usize>,
    bound_nr: Option<usize>,
) -> Result<MatchingInstance> {
    let in_range = |d: u64| max_distance.is_none_or(|m| d as f64 <= m);

    // (distance, resource) per agent
    let mut near: Vec<Vec<(u64, usize)>> = match bound_rn {
        Some(k) => {
            let buckets = Buckets::new(resources);
            agents.iter().map(|&a| buckets.nearest(resources, a, k, max_distance)).collect()
        }
        None => agents
            .iter()
            .map(|&a| {
                resources
                    .iter()
                    .enumerate()
                    .map(|(r, &p)| (manhattan(a, p), r))
                    .filter(|&(d, _)| in_range(d))
                    .collect()
            })
            .collect(),
    };

    if let Some(k) = bound_nr {
        let mut by_resource: Vec<Vec<(u64, usize)>> = vec![Vec::new(); resources.len()];
        for (n, list) in near.iter().enumerate() {
            for &(d, r) in list {
                by_resource[r].push((d, n));
            }
        }
        let mut keep: Vec<Vec<usize>> = vec![Vec::new(); agents.len()];
        for (r, list) in by_resource.iter_mut().enumerate() {
            if list.len() > k {
                list.select_nth_unstable(k - 1);
                list.truncate(k);
            }
            for &(_, n) in list.iter() {
                keep[n].push(r);
            }
        }
        for (list, kept) in near.iter_mut().zip(&keep) {
            list.retain(|&(_, r)| kept.contains(&r));
        }
    }

    let min_d = near.iter().flatten().map(|&(d, _)| d.max(1)).min();
    let interest = near
        .into_iter()
        .map(|list| {
            list.into_iter()
                .map(|(d, r)| (r, min_d.unwrap() as f64 / d.max(1) as f64))
                .collect()
        })
        .collect();
    MatchingInstance::new(agents.len(), resources.len(), interest)
}

fn manhattan(a: GridPoint, b: GridPoint) -> u64 {
    ((a.0 - b.0).abs() + (a.1 - b.1).abs()) as u64
}

/// Resources bucketed into square cells for nearest-neighbour queries.
struct Buckets {
    origin: GridPoint,
    cell: i64,
    cols: i64,
    rows: i64,
    cells: Vec<Vec<usize>>,
}

impl Buckets {
    fn new(points: &[GridPoint]) -> Self {
        let min_x = points.iter().map(|p| p.0).min().unwrap_or(0);
        let min_y = points.iter().map(|p| p.1).min().unwrap_or(0);
        let span = points.iter().map(|p| (p.0 - min_x).max(p.1 - min_y)).max().unwrap_or(0) + 1;
        let per_side = ((points.len() as f64).sqrt().ceil() as i64).max(1);
        let cell = ((span + per_side - 1) / per_side).max(1);
        let cols = (span + cell - 1) / cell;
        let rows = cols;
        let mut cells = vec![Vec::new(); (cols * rows) as usize];
        for (i, p) in points.iter().enumerate() {
            let cx = (p.0 - min_x) / cell;
            let cy = (p.1 - min_y) / cell;
            cells[(cy * cols + cx) as usize].push(i);
        }
        Self { origin: (min_x, min_y), cell, cols, rows, cells }
    }

    /// The `k` nearest points within `max_distance` by (distance, index).
    fn nearest(&self, points: &[GridPoint], a: GridPoint, k: usize, max_distance: Option<f64>) -> Vec<(u64, usize)> {
        if k == 0 {
            return Vec::new();
        }
        let cx = ((a.0 - self.origin.0) / self.cell).clamp(0, self.cols - 1);
        let cy = ((a.1 - self.origin.1) / self.cell).clamp(0, self.rows - 1);
        let in_range = |d: u64| max_distance.is_none_or(|m| d as f64 <= m);
        let mut found: Vec<(u64, usize)> = Vec::new();
        let last_ring = self.cols.max(self.rows);
        for ring in 0..=last_ring {
            for dy in -ring..=ring {
                let y = cy + dy;
                if y < 0 || y >= self.rows {
                    continue;
                }
                let step = if dy.abs() == ring { 1 } else { (2 * ring).max(1) };
                let mut dx = -ring;
                while dx <= ring {
                    let x = cx + dx;
                    if x >= 0 && x < self.cols {
                        for &i in &self.cells[(y * self.cols + x) as usize] {
                            let d = manhattan(a, points[i]);
                            if in_range(d) {
                                found.push((d, i));
                            }
                        }
                    }
                    dx += step;
                }
            }
            // unvisited cells lie at distance > ring * cell
            let reach = (ring * self.cell) as u64;
            if found.len() >= k {
                found.select_nth_unstable(k - 1);
                found.truncate(k);
                if found.iter().all(|&(d, _)| d <= reach) {
                    break;
                }
            }
            if max_distance.is_some_and(|m| reach as f64 >= m) {
                break;
            }
        }
        found
    }
}
