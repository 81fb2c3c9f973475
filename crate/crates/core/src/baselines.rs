//! Centralized reference algorithms: Hungarian (exact, bipartite), subset
//! enumeration (exact, general graphs, desk scale), utility-blind random-order
//! greedy, random assignment, and weight-ordered greedy on edge lists.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{AlmaError, Result};
use crate::instance::{Matching, MatchingInstance};
use crate::rng::{self, Rng};

/// Largest connected component the enumeration accepts.
pub const MAX_COMPONENT_VERTICES: usize = 16;

/// Ties in welfare closer than this are broken by cardinality, then by the
/// lexicographically smallest edge set.
const WEIGHT_TIE: f64 = 1e-12;

/// Dense square weight table, missing edges are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCostMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub weights: Vec<f64>,
}

impl DenseCostMatrix {
    /// Padded to `max(N, R)` on both sides.
    pub fn square_from(instance: &MatchingInstance) -> Self {
        let n = instance.n_agents().max(instance.n_resources());
        let mut weights = vec![0.0; n * n];
        for (a, r, u) in instance.edges() {
            weights[a * n + r] = u;
        }
        Self { n_rows: n, n_cols: n, weights }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.n_cols + col]
    }
}

/// Maximum-utility matching by the O(n^3) shortest augmenting path form of
/// the Hungarian method. Zero-utility assignments are dropped afterwards.
pub fn hungarian_max_weight(instance: &MatchingInstance) -> Matching {
    let m = DenseCostMatrix::square_from(instance);
    let n = m.n_rows;
    let mut matching = Matching::empty(instance.n_agents());
    if n == 0 {
        return matching;
    }

    // Minimize -weight. Rows/cols are 1-based; index 0 is the virtual column.
    let cost = |i: usize, j: usize| -m.get(i - 1, j - 1);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    for j in 1..=n {
        let (agent, resource) = (p[j] - 1, j - 1);
        if agent < instance.n_agents() && instance.utility(agent, resource).is_some_and(|w| w > 0.0) {
            matching.assign(agent, resource);
        }
    }
    matching
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedEdge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

impl WeightedEdge {
    pub fn new(u: usize, v: usize, weight: f64) -> Self {
        Self { u, v, weight }
    }
}

/// Matching on an edge list. In bipartite mode `u` and `v` live in separate
/// id spaces and pairs are reported as `(u, v)`; otherwise pairs are
/// `(min, max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMatching {
    pub pairs: Vec<(usize, usize)>,
    pub weight: f64,
}

#[derive(Clone)]
struct Best {
    weight: f64,
    edges: Vec<usize>,
}

fn better(a: &Best, b: &Best) -> bool {
    if (a.weight - b.weight).abs() > WEIGHT_TIE {
        return a.weight > b.weight;
    }
    match a.edges.len().cmp(&b.edges.len()) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => a.edges < b.edges,
    }
}

/// Exact maximum-weight matching by enumeration over vertex subsets, one
/// connected component at a time. Ties: larger weight, then more edges, then
/// the lexicographically smallest edge set. Non-positive edges are ignored.
pub fn brute_force_max_weight(edges: &[WeightedEdge], bipartite: bool) -> Result<EdgeMatching> {
    // Canonical labels and the best weight per unordered pair.
    let mut label_weight: HashMap<(usize, usize), f64> = HashMap::new();
    for e in edges {
        if !(e.weight > 0.0) || (!bipartite && e.u == e.v) {
            continue;
        }
        let label = if bipartite { (e.u, e.v) } else { (e.u.min(e.v), e.u.max(e.v)) };
        let w = label_weight.entry(label).or_insert(e.weight);
        *w = w.max(e.weight);
    }
    let mut labels: Vec<((usize, usize), f64)> = label_weight.into_iter().collect();
    labels.sort_by(|a, b| a.0.cmp(&b.0));

    // Vertex ids: (side, id) with side 1 for the right-hand side of a bipartite graph.
    let mut vertex_of: HashMap<(u8, usize), usize> = HashMap::new();
    let mut ends = Vec::with_capacity(labels.len());
    for &((a, b), _) in &labels {
        let right = if bipartite { 1 } else { 0 };
        let next = vertex_of.len();
        let va = *vertex_of.entry((0, a)).or_insert(next);
        let next = vertex_of.len();
        let vb = *vertex_of.entry((right, b)).or_insert(next);
        ends.push((va, vb));
    }
    let n_vertices = vertex_of.len();

    let mut parent: Vec<usize> = (0..n_vertices).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = x;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for &(a, b) in &ends {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    let mut components: HashMap<usize, Vec<usize>> = HashMap::new();
    for v in 0..n_vertices {
        let root = find(&mut parent, v);
        components.entry(root).or_default().push(v);
    }
    let mut components: Vec<Vec<usize>> = components.into_values().collect();
    components.sort();

    let mut chosen: Vec<usize> = Vec::new();
    for comp in &components {
        if comp.len() > MAX_COMPONENT_VERTICES {
            return Err(AlmaError::ComponentTooLarge { vertices: comp.len(), limit: MAX_COMPONENT_VERTICES });
        }
        let local: HashMap<usize, usize> = comp.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let k = comp.len();
        // adjacency: (local neighbor, edge index)
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
        for (idx, &(a, b)) in ends.iter().enumerate() {
            if let (Some(&la), Some(&lb)) = (local.get(&a), local.get(&b)) {
                adj[la].push((lb, idx));
                adj[lb].push((la, idx));
            }
        }
        let mut memo: Vec<Best> = Vec::with_capacity(1 << k);
        memo.push(Best { weight: 0.0, edges: Vec::new() });
        for mask in 1usize..(1 << k) {
            let v = mask.trailing_zeros() as usize;
            let rest = mask & !(1 << v);
            let mut best = memo[rest].clone();
            for &(u, idx) in &adj[v] {
                if rest & (1 << u) == 0 {
                    continue;
                }
                let sub = &memo[rest & !(1 << u)];
                let mut cand_edges = sub.edges.clone();
                let pos = cand_edges.binary_search(&idx).unwrap_or_else(|p| p);
                cand_edges.insert(pos, idx);
                let cand = Best { weight: sub.weight + labels[idx].1, edges: cand_edges };
                if better(&cand, &best) {
                    best = cand;
                }
            }
            memo.push(best);
        }
        chosen.extend_from_slice(&memo[(1 << k) - 1].edges);
    }
    chosen.sort_unstable();

    let pairs: Vec<(usize, usize)> = chosen.iter().map(|&i| labels[i].0).collect();
    let weight = chosen.iter().map(|&i| labels[i].1).sum();
    Ok(EdgeMatching { pairs, weight })
}

/// Edges of an instance as a bipartite edge list.
pub fn instance_edges(instance: &MatchingInstance) -> Vec<WeightedEdge> {
    instance.edges().map(|(n, r, u)| WeightedEdge::new(n, r, u)).collect()
}

/// Exact optimum of a bipartite instance via enumeration.
pub fn brute_force_instance(instance: &MatchingInstance) -> Result<Matching> {
    let em = brute_force_max_weight(&instance_edges(instance), true)?;
    let mut m = Matching::empty(instance.n_agents());
    for (n, r) in em.pairs {
        m.assign(n, r);
    }
    Ok(m)
}

/// Agents in uniformly random order each take their favourite free
/// positive-utility resource. Utility-blind across agents.
pub fn centralized_greedy(instance: &MatchingInstance, seed: u64) -> Matching {
    let mut rng = rng::seeded(seed);
    let mut order: Vec<usize> = (0..instance.n_agents()).collect();
    order.shuffle(&mut rng);
    let mut taken = vec![false; instance.n_resources()];
    let mut m = Matching::empty(instance.n_agents());
    for n in order {
        if let Some(&(r, _)) = instance.preferences(n).iter().find(|&&(r, _)| !taken[r]) {
            taken[r] = true;
            m.assign(n, r);
        }
    }
    m
}

/// Agents in random order each take a uniformly random free
/// positive-utility resource.
pub fn random_assignment(instance: &MatchingInstance, seed: u64) -> Matching {
    let mut rng = rng::seeded(seed);
    let mut order: Vec<usize> = (0..instance.n_agents()).collect();
    order.shuffle(&mut rng);
    let mut taken = vec![false; instance.n_resources()];
    let mut m = Matching::empty(instance.n_agents());
    for n in order {
        let free: Vec<usize> =
            instance.interest(n).iter().filter(|&&(r, u)| u > 0.0 && !taken[r]).map(|&(r, _)| r).collect();
        if !free.is_empty() {
            let r = free[rng.random_range(0..free.len())];
            taken[r] = true;
            m.assign(n, r);
        }
    }
    m
}

/// Takes disjoint edges in decreasing weight; equal weights in random order.
/// Works on a general graph (`u`, `v` in one id space).
pub fn greedy_by_weight(edges: &[WeightedEdge], rng: &mut Rng) -> EdgeMatching {
    let mut order: Vec<WeightedEdge> = edges.iter().copied().filter(|e| e.weight > 0.0 && e.u != e.v).collect();
    order.shuffle(rng);
    order.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    let mut used = std::collections::HashSet::new();
    let mut pairs = Vec::new();
    let mut weight = 0.0;
    for e in order {
        if used.contains(&e.u) || used.contains(&e.v) {
            continue;
        }
        used.insert(e.u);
        used.insert(e.v);
        pairs.push((e.u.min(e.v), e.u.max(e.v)));
        weight += e.weight;
    }
    EdgeMatching { pairs, weight }
}
