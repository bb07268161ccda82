//! Exact offline optimum by depth-first search over timesteps.
//!
//! The search state is the vector of server loads. At each step the search
//! branches over every matching of the step graph that still fits, heaviest
//! first, and cuts a branch once its value plus an admissible bound on the
//! remaining steps cannot beat the incumbent.
//!
//! [`brute_force_optimal`] is a second, unpruned implementation with its own
//! matching enumeration. The two must agree bit for bit.

use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::greedy::StepMatching;
use crate::model::{Allocation, Edge, Instance, ModelError, TimeStepGraph};

pub const MAX_NODES_ENV: &str = "OBRM_ORACLE_MAX_NODES";
pub const TIME_LIMIT_ENV: &str = "OBRM_ORACLE_TIME_LIMIT";

const DEFAULT_MAX_NODES: u64 = 20_000_000;
const DEFAULT_TIME_LIMIT: Duration = Duration::from_secs(60);
const BRUTE_FORCE_LIMIT: u128 = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("step {timestep} has more than {limit} matchings")]
    Budget { timestep: usize, limit: u64 },
    #[error("brute force would visit {combinations} combinations (limit {limit})")]
    TooLarge { combinations: u128, limit: u128 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchBudget {
    pub max_nodes: u64,
    pub time_limit: Duration,
}

impl SearchBudget {
    pub fn new(max_nodes: u64, time_limit: Duration) -> Self {
        SearchBudget { max_nodes, time_limit }
    }

    /// Defaults, overridden by `OBRM_ORACLE_MAX_NODES` (integer) and
    /// `OBRM_ORACLE_TIME_LIMIT` (e.g. `30s`, `500ms`).
    pub fn from_env() -> Self {
        let max_nodes = std::env::var(MAX_NODES_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .filter(|&n| n > 0)
            .unwrap_or(DEFAULT_MAX_NODES);
        let time_limit = std::env::var(TIME_LIMIT_ENV)
            .ok()
            .and_then(|v| humantime::parse_duration(v.trim()).ok())
            .filter(|d| !d.is_zero())
            .unwrap_or(DEFAULT_TIME_LIMIT);
        SearchBudget { max_nodes, time_limit }
    }
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget::from_env()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub opt_value: f64,
    pub opt_allocation: Allocation,
    pub nodes_explored: u64,
    pub pruned: u64,
    /// Node or time budget ran out; `opt_value` is then only a lower bound.
    pub time_limit_hit: bool,
}

/// Every matching of `graph`, the empty one included, each exactly once.
/// Edges inside a matching are in job order.
pub fn enumerate_step_matchings(graph: &TimeStepGraph, budget: &SearchBudget) -> Result<Vec<StepMatching>, OracleError> {
    fn extend(
        jobs: &[Vec<Edge>],
        k: usize,
        used: &mut Vec<usize>,
        current: &mut Vec<Edge>,
        out: &mut Vec<Vec<Edge>>,
        limit: u64,
    ) -> bool {
        if k == jobs.len() {
            out.push(current.clone());
            return (out.len() as u64) <= limit;
        }
        if !extend(jobs, k + 1, used, current, out, limit) {
            return false;
        }
        for e in &jobs[k] {
            if used.contains(&e.server.0) {
                continue;
            }
            used.push(e.server.0);
            current.push(*e);
            let ok = extend(jobs, k + 1, used, current, out, limit);
            current.pop();
            used.pop();
            if !ok {
                return false;
            }
        }
        true
    }

    let mut jobs: Vec<Vec<Edge>> = graph
        .jobs()
        .iter()
        .map(|&j| graph.edges().iter().copied().filter(|e| e.job == j).collect())
        .collect();
    jobs.retain(|edges: &Vec<Edge>| !edges.is_empty());
    for edges in &mut jobs {
        edges.sort_by_key(|e| e.server);
    }
    jobs.sort_by_key(|edges| edges[0].job.index);

    let mut out = Vec::new();
    if !extend(&jobs, 0, &mut Vec::new(), &mut Vec::new(), &mut out, budget.max_nodes) {
        return Err(OracleError::Budget {
            timestep: graph.timestep(),
            limit: budget.max_nodes,
        });
    }
    Ok(out
        .into_iter()
        .map(|edges| StepMatching {
            timestep: graph.timestep(),
            edges,
        })
        .collect())
}

/// Maximum-weight matching value of a bipartite graph given as a dense
/// `rows x cols` weight matrix (absent edges as 0), by the Hungarian method
/// with potentials.
pub fn max_weight_matching(weights: &[Vec<f64>]) -> f64 {
    let rows = weights.len();
    let cols = weights.iter().map(Vec::len).max().unwrap_or(0);
    let size = rows.max(cols);
    if size == 0 {
        return 0.0;
    }
    let cost = |i: usize, j: usize| -> f64 { -weights.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0) };

    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0.0; size + 1];
    let mut v = vec![0.0; size + 1];
    let mut owner = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=size {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=size)
        .filter(|&j| owner[j] != 0)
        .map(|j| -cost(owner[j] - 1, j - 1))
        .sum()
}

fn step_matching_bound(instance: &Instance, t: usize, fits: impl Fn(&Edge) -> bool) -> f64 {
    let graph = instance.step(t);
    let jobs = graph.jobs();
    let mut matrix = vec![vec![0.0; jobs.len()]; instance.num_servers()];
    for e in graph.edges().iter().filter(|e| fits(e)) {
        let col = jobs.iter().position(|&j| j == e.job).expect("edge job listed in step");
        matrix[e.server.0][col] = e.weight;
    }
    max_weight_matching(&matrix)
}

/// Inflates a float sum of `terms` non-negative values so it bounds the exact
/// sum, and any other summation order of it, from above.
fn round_up(sum: f64, terms: usize) -> f64 {
    sum + sum * terms as f64 * f64::EPSILON
}

/// `Σ_{t >= from_step}` of the max-weight matching of `G(t)`, ignoring the
/// cumulative budget. Edges heavier than a server's `remaining` capacity are
/// left out since no continuation can take them. The sum is rounded up so it
/// stays `>=` any feasible value regardless of summation order.
pub fn upper_bound(instance: &Instance, from_step: usize, remaining: &[f64]) -> f64 {
    let terms = (from_step..instance.num_steps())
        .map(|t| instance.step(t).edges().len() + 1)
        .sum();
    let sum = (from_step..instance.num_steps())
        .map(|t| step_matching_bound(instance, t, |e| e.weight <= remaining[e.server.0]))
        .sum();
    round_up(sum, terms)
}

/// `min(upper_bound(instance, 0, C), Σ C_i)`: a certificate that `OPT` is no
/// larger, usable when exact search is out of reach.
pub fn relaxed_upper_bound(instance: &Instance) -> f64 {
    let caps = instance.capacities();
    let edges = instance.steps().iter().map(|g| g.edges().len()).sum::<usize>();
    let total = round_up(caps.iter().sum(), edges + caps.len());
    upper_bound(instance, 0, caps).min(total)
}

pub fn offline_optimal(instance: &Instance, budget: &SearchBudget) -> Result<OracleResult, OracleError> {
    offline_optimal_with(instance, budget, true)
}

/// Same search with pruning switched off, for checking that pruning never
/// changes the optimum.
pub fn offline_optimal_unpruned(instance: &Instance, budget: &SearchBudget) -> Result<OracleResult, OracleError> {
    offline_optimal_with(instance, budget, false)
}

struct Candidate {
    edges: Vec<Edge>,
}

struct Search<'a> {
    instance: &'a Instance,
    candidates: Vec<Vec<Candidate>>,
    pruning: bool,
    loads: Vec<f64>,
    chosen: Vec<usize>,
    best_value: f64,
    best_choice: Option<Vec<usize>>,
    nodes: u64,
    pruned: u64,
    max_nodes: u64,
    deadline: Instant,
    exhausted: bool,
}

impl Search<'_> {
    fn bound(&self, t: usize) -> f64 {
        let caps = self.instance.capacities();
        let loads = &self.loads;
        let matchings: f64 = (t..self.instance.num_steps())
            .map(|s| step_matching_bound(self.instance, s, |e| loads[e.server.0] + e.weight <= caps[e.server.0]))
            .sum();
        let headroom: f64 = caps.iter().zip(loads).map(|(c, l)| (c - l).max(0.0)).sum();
        matchings.min(headroom)
    }

    // `value` is the running left fold over chosen edges in (t, job, server)
    // order, which is exactly how `allocation_value` sums.
    fn dfs(&mut self, t: usize, value: f64) {
        if self.exhausted {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.max_nodes || (self.nodes.is_multiple_of(4096) && Instant::now() >= self.deadline) {
            self.exhausted = true;
            return;
        }
        if t == self.instance.num_steps() {
            if value > self.best_value {
                self.best_value = value;
                self.best_choice = Some(self.chosen.clone());
            }
            return;
        }
        if self.pruning && self.best_choice.is_some() {
            // Slack keeps near-ties alive so rounding in the bound cannot
            // discard a branch whose exact fold would win.
            let slack = 1e-9 * self.best_value.abs().max(1.0);
            if value + self.bound(t) + slack <= self.best_value {
                self.pruned += 1;
                return;
            }
        }
        let caps = self.instance.capacities();
        for k in 0..self.candidates[t].len() {
            let fits = self.candidates[t][k]
                .edges
                .iter()
                .all(|e| self.loads[e.server.0] + e.weight <= caps[e.server.0]);
            if !fits {
                continue;
            }
            let saved: Vec<(usize, f64)> = self.candidates[t][k]
                .edges
                .iter()
                .map(|e| (e.server.0, self.loads[e.server.0]))
                .collect();
            let mut next = value;
            for e in &self.candidates[t][k].edges {
                self.loads[e.server.0] += e.weight;
                next += e.weight;
            }
            self.chosen.push(k);
            self.dfs(t + 1, next);
            self.chosen.pop();
            for (i, load) in saved {
                self.loads[i] = load;
            }
            if self.exhausted {
                return;
            }
        }
    }
}

fn offline_optimal_with(instance: &Instance, budget: &SearchBudget, pruning: bool) -> Result<OracleResult, OracleError> {
    let mut candidates = Vec::with_capacity(instance.num_steps());
    for graph in instance.steps() {
        let mut list: Vec<(f64, Candidate)> = enumerate_step_matchings(graph, budget)?
            .into_iter()
            .map(|m| (m.value(), Candidate { edges: m.edges }))
            .collect();
        // Heaviest first; stable sort keeps enumeration order among ties.
        list.sort_by(|a, b| b.0.total_cmp(&a.0));
        candidates.push(list.into_iter().map(|(_, c)| c).collect());
    }

    let mut search = Search {
        instance,
        candidates,
        pruning,
        loads: vec![0.0; instance.num_servers()],
        chosen: Vec::with_capacity(instance.num_steps()),
        best_value: f64::NEG_INFINITY,
        best_choice: None,
        nodes: 0,
        pruned: 0,
        max_nodes: budget.max_nodes,
        deadline: Instant::now() + budget.time_limit,
        exhausted: false,
    };
    search.dfs(0, 0.0);

    let mut alloc = Allocation::new(instance.num_servers());
    if let Some(choice) = &search.best_choice {
        for (t, &k) in choice.iter().enumerate() {
            for e in &search.candidates[t][k].edges {
                alloc.push(*e);
            }
        }
    }
    Ok(OracleResult {
        opt_value: alloc.value(),
        opt_allocation: alloc,
        nodes_explored: search.nodes,
        pruned: search.pruned,
        time_limit_hit: search.exhausted,
    })
}

/// Exhaustive cross product over per-step matchings, no pruning.
///
/// Per-step matchings are found by filtering all edge subsets, independently
/// of [`enumerate_step_matchings`].
pub fn brute_force_optimal(instance: &Instance) -> Result<OracleResult, OracleError> {
    let mut per_step: Vec<Vec<Vec<Edge>>> = Vec::with_capacity(instance.num_steps());
    let mut combinations: u128 = 1;
    for graph in instance.steps() {
        let edges = graph.edges();
        if edges.len() > 20 {
            return Err(OracleError::TooLarge {
                combinations: 1u128 << edges.len(),
                limit: BRUTE_FORCE_LIMIT,
            });
        }
        let mut matchings = Vec::new();
        for mask in 0u32..(1u32 << edges.len()) {
            let subset: Vec<Edge> = (0..edges.len())
                .filter(|&k| mask >> k & 1 == 1)
                .map(|k| edges[k])
                .collect();
            let is_matching = subset.iter().enumerate().all(|(a, x)| {
                subset[a + 1..]
                    .iter()
                    .all(|y| x.server != y.server && x.job != y.job)
            });
            if is_matching {
                let mut subset = subset;
                subset.sort_by_key(|e| (e.job.index, e.server));
                matchings.push(subset);
            }
        }
        combinations = combinations.saturating_mul(matchings.len() as u128);
        if combinations > BRUTE_FORCE_LIMIT {
            return Err(OracleError::TooLarge {
                combinations,
                limit: BRUTE_FORCE_LIMIT,
            });
        }
        per_step.push(matchings);
    }

    let caps = instance.capacities();
    let steps = per_step.len();
    let mut index = vec![0usize; steps];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut visited = 0u64;
    loop {
        visited += 1;
        let mut loads = vec![0.0; caps.len()];
        let mut value = 0.0;
        for (t, &k) in index.iter().enumerate() {
            for e in &per_step[t][k] {
                loads[e.server.0] += e.weight;
                value += e.weight;
            }
        }
        let feasible = loads.iter().zip(caps).all(|(l, c)| l <= c);
        if feasible && best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, index.clone()));
        }

        // Odometer increment; done when every digit wraps.
        let mut pos = 0;
        while pos < steps {
            index[pos] += 1;
            if index[pos] < per_step[pos].len() {
                break;
            }
            index[pos] = 0;
            pos += 1;
        }
        if pos == steps {
            break;
        }
    }

    let mut alloc = Allocation::new(instance.num_servers());
    if let Some((_, choice)) = best {
        for (t, k) in choice.into_iter().enumerate() {
            for e in &per_step[t][k] {
                alloc.push(*e);
            }
        }
    }
    Ok(OracleResult {
        opt_value: alloc.value(),
        opt_allocation: alloc,
        nodes_explored: visited,
        pruned: 0,
        time_limit_hit: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{gen_example2, gen_example3};
    use crate::model::is_feasible;

    fn budget() -> SearchBudget {
        SearchBudget::new(1_000_000, Duration::from_secs(10))
    }

    fn assert_close_above(bound: f64, exact: f64) {
        assert!(bound >= exact && bound - exact < 1e-12, "{bound} vs {exact}");
    }

    #[test]
    fn bound_survives_summation_order() {
        // Same edges as the optimum, summed in a different order.
        let steps = vec![
            TimeStepGraph::new(0, 0..2, [(0, 0, 0.113887), (1, 0, 0.113887), (0, 1, 0.049737), (1, 1, 0.049737)])
                .unwrap(),
            TimeStepGraph::new(
                1,
                0..3,
                [(0, 0, 0.038467), (1, 0, 0.038467), (0, 1, 0.206327), (1, 1, 0.206327), (0, 2, 0.040263), (1, 2, 0.040263)],
            )
            .unwrap(),
        ];
        let inst = Instance::new("order", vec![1.0, 1.0], steps).unwrap();
        let opt = offline_optimal(&inst, &budget()).unwrap().opt_value;
        assert!(upper_bound(&inst, 0, inst.capacities()) >= opt);
        assert!(relaxed_upper_bound(&inst) >= opt);
    }

    #[test]
    fn step_matchings_of_a_star() {
        let g = TimeStepGraph::new(0, [0], [(0, 0, 0.2), (1, 0, 0.3)]).unwrap();
        let ms = enumerate_step_matchings(&g, &budget()).unwrap();
        let mut shapes: Vec<Vec<usize>> = ms.iter().map(|m| m.edges.iter().map(|e| e.server.0).collect()).collect();
        shapes.sort();
        assert_eq!(shapes, vec![vec![], vec![0], vec![1]]);

        let empty = TimeStepGraph::new(0, [], []).unwrap();
        assert_eq!(enumerate_step_matchings(&empty, &budget()).unwrap().len(), 1);
        let single = TimeStepGraph::new(0, [0], [(0, 0, 0.2)]).unwrap();
        assert_eq!(enumerate_step_matchings(&single, &budget()).unwrap().len(), 2);
    }

    #[test]
    fn step_matchings_complete_2x2() {
        // K_{2,2}: empty, 4 singletons, 2 perfect.
        let g = TimeStepGraph::new(0, [0, 1], [(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert_eq!(enumerate_step_matchings(&g, &budget()).unwrap().len(), 7);
        let tight = SearchBudget::new(3, Duration::from_secs(1));
        assert!(matches!(enumerate_step_matchings(&g, &tight), Err(OracleError::Budget { .. })));
    }

    #[test]
    fn hungarian_agrees_with_enumeration() {
        let g = TimeStepGraph::new(
            0,
            [0, 1, 2],
            [(0, 0, 3.0), (0, 1, 2.0), (1, 0, 2.0), (1, 2, 0.5), (2, 2, 4.0), (2, 1, 1.0)],
        )
        .unwrap();
        let inst = Instance::new("h", vec![10.0; 3], vec![g]).unwrap();
        let brute = enumerate_step_matchings(inst.step(0), &budget())
            .unwrap()
            .iter()
            .map(StepMatching::value)
            .fold(0.0, f64::max);
        assert_eq!(brute, 8.0);
        assert_close_above(upper_bound(&inst, 0, inst.capacities()), 8.0);
        assert_eq!(max_weight_matching(&[]), 0.0);
        assert_eq!(max_weight_matching(&[vec![1.0, 5.0, 2.0]]), 5.0);
    }

    #[test]
    fn example_optima() {
        let inst = gen_example2(3, 0.01).unwrap();
        let opt = offline_optimal(&inst, &budget()).unwrap();
        assert!((opt.opt_value - 1.49).abs() < 1e-12);
        assert!(!opt.time_limit_hit);
        assert!(is_feasible(&inst, &opt.opt_allocation).unwrap().is_ok());
        assert_eq!(brute_force_optimal(&inst).unwrap().opt_value, opt.opt_value);

        let inst = gen_example3(1.0, 0.01).unwrap();
        assert_eq!(offline_optimal(&inst, &budget()).unwrap().opt_value, 1.0);
        assert_eq!(brute_force_optimal(&inst).unwrap().opt_value, 1.0);
        assert_close_above(upper_bound(&inst, 0, &[1.0]), 1.49);
        assert_eq!(upper_bound(&inst, 2, &[1.0]), 0.0);
    }

    #[test]
    fn empty_and_single() {
        let inst = Instance::new("e", vec![1.0], vec![]).unwrap();
        let r = offline_optimal(&inst, &budget()).unwrap();
        assert_eq!(r.opt_value, 0.0);
        assert!(r.opt_allocation.is_empty());

        let g = TimeStepGraph::new(0, [0], [(0, 0, 0.7)]).unwrap();
        let inst = Instance::new("s", vec![1.0], vec![g]).unwrap();
        assert_eq!(brute_force_optimal(&inst).unwrap().opt_value, 0.7);
        assert_close_above(upper_bound(&inst, 0, &[1.0]), 0.7);
    }

    #[test]
    fn node_budget_flags_the_result() {
        // Seven matchings per step fit the budget; the search over eight
        // steps does not.
        let steps = (0..8)
            .map(|t| TimeStepGraph::new(t, 0..2, [(0, 0, 0.45), (0, 1, 0.35), (1, 0, 0.35), (1, 1, 0.45)]).unwrap())
            .collect();
        let inst = Instance::new("long", vec![1.0, 1.0], steps).unwrap();
        let r = offline_optimal(&inst, &SearchBudget::new(10, Duration::from_secs(1))).unwrap();
        assert!(r.time_limit_hit);
        assert!(r.opt_value <= 1.8 + 1e-12);
    }

    #[test]
    fn brute_force_size_guard() {
        let edges: Vec<(usize, usize, f64)> = (0..4).flat_map(|i| (0..4).map(move |j| (i, j, 0.1))).collect();
        let steps = (0..4)
            .map(|t| TimeStepGraph::new(t, 0..4, edges.clone()).unwrap())
            .collect();
        let inst = Instance::new("big", vec![1.0; 4], steps).unwrap();
        assert!(matches!(brute_force_optimal(&inst), Err(OracleError::TooLarge { .. })));
    }

    #[test]
    fn budget_from_env_falls_back_to_defaults() {
        let b = SearchBudget::from_env();
        assert!(b.max_nodes > 0);
        assert!(!b.time_limit.is_zero());
    }
}
