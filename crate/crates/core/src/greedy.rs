//! The per-step greedy matcher shared by the online algorithms.
//!
//! Edges of one step graph are scanned once in descending weight; an edge is
//! kept when its server is active and neither endpoint is already matched.
//! The result is maximal for the scan order, not a maximum-weight matching.

use std::cmp::Ordering;

use crate::model::{Edge, ServerId, TimeStepGraph};

/// Servers still eligible for matching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    active: Vec<bool>,
}

impl ActiveSet {
    pub fn all(num_servers: usize) -> Self {
        ActiveSet {
            active: vec![true; num_servers],
        }
    }

    pub fn none(num_servers: usize) -> Self {
        ActiveSet {
            active: vec![false; num_servers],
        }
    }

    pub fn contains(&self, server: ServerId) -> bool {
        self.active.get(server.0).copied().unwrap_or(false)
    }

    pub fn remove(&mut self, server: ServerId) -> bool {
        std::mem::replace(&mut self.active[server.0], false)
    }

    pub fn insert(&mut self, server: ServerId) {
        self.active[server.0] = true;
    }

    pub fn len(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = ServerId> + '_ {
        self.active
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(i, _)| ServerId(i))
    }
}

/// Total order used to break weight ties in the scan.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TieBreakRule {
    /// Descending weight, then ascending server, then ascending job.
    #[default]
    ServerThenJob,
    /// Descending weight, then ascending job, then ascending server.
    JobThenServer,
}

impl TieBreakRule {
    /// `Less` means `a` is scanned before `b`.
    pub fn compare(self, a: &Edge, b: &Edge) -> Ordering {
        let by_weight = b.weight.total_cmp(&a.weight);
        let rest = match self {
            TieBreakRule::ServerThenJob => (a.server, a.job.index).cmp(&(b.server, b.job.index)),
            TieBreakRule::JobThenServer => (a.job.index, a.server).cmp(&(b.job.index, b.server)),
        };
        by_weight.then(rest)
    }
}

/// `M` for one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMatching {
    pub timestep: usize,
    /// Edges in the order they were selected.
    pub edges: Vec<Edge>,
}

impl StepMatching {
    pub fn value(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }
}

pub fn greedy_match(graph: &TimeStepGraph, active: &ActiveSet, order: TieBreakRule) -> StepMatching {
    let mut scan: Vec<&Edge> = graph.edges().iter().collect();
    scan.sort_by(|a, b| order.compare(a, b));

    let mut used_servers = Vec::new();
    let mut used_jobs = Vec::new();
    let mut edges = Vec::new();
    for e in scan {
        if !active.contains(e.server) || used_servers.contains(&e.server) || used_jobs.contains(&e.job) {
            continue;
        }
        used_servers.push(e.server);
        used_jobs.push(e.job);
        edges.push(*e);
    }
    StepMatching {
        timestep: graph.timestep(),
        edges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(edges: &[(usize, usize, f64)]) -> TimeStepGraph {
        let mut jobs: Vec<usize> = edges.iter().map(|e| e.1).collect();
        jobs.sort_unstable();
        jobs.dedup();
        TimeStepGraph::new(0, jobs, edges.iter().copied()).unwrap()
    }

    fn pairs(m: &StepMatching) -> Vec<(usize, usize)> {
        m.edges.iter().map(|e| (e.server.0, e.job.index)).collect()
    }

    #[test]
    fn scan_picks_heaviest_then_blocks() {
        // {(s1,j0), (s0,j1)} also weighs 5; the scan must still return the
        // blocking-order result.
        let g = graph(&[(0, 0, 5.0), (1, 0, 3.0), (0, 1, 2.0)]);
        let m = greedy_match(&g, &ActiveSet::all(2), TieBreakRule::default());
        assert_eq!(pairs(&m), vec![(0, 0)]);
        assert_eq!(m.value(), 5.0);
    }

    #[test]
    fn scan_is_not_max_weight() {
        // Greedy takes (0,0,3) and then nothing; the optimum is 2 + 2 = 4.
        let g = graph(&[(0, 0, 3.0), (0, 1, 2.0), (1, 0, 2.0)]);
        let m = greedy_match(&g, &ActiveSet::all(2), TieBreakRule::default());
        assert_eq!(pairs(&m), vec![(0, 0)]);
    }

    #[test]
    fn inactive_servers_are_skipped() {
        let g = graph(&[(0, 0, 5.0), (1, 0, 3.0)]);
        let m = greedy_match(&g, &ActiveSet::none(2), TieBreakRule::default());
        assert!(m.edges.is_empty());

        let mut active = ActiveSet::all(2);
        active.remove(ServerId(0));
        let m = greedy_match(&g, &active, TieBreakRule::default());
        assert_eq!(pairs(&m), vec![(1, 0)]);
    }

    #[test]
    fn single_edge() {
        let g = graph(&[(0, 0, 0.7)]);
        let m = greedy_match(&g, &ActiveSet::all(1), TieBreakRule::default());
        assert_eq!(pairs(&m), vec![(0, 0)]);
    }

    #[test]
    fn tie_break_rule_fixes_scan_order() {
        // s0-j1 and s1-j0 tie with s0-j0.
        let g = graph(&[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0)]);
        let a = greedy_match(&g, &ActiveSet::all(2), TieBreakRule::ServerThenJob);
        assert_eq!(pairs(&a), vec![(0, 0)]);
        let g = graph(&[(0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let a = greedy_match(&g, &ActiveSet::all(2), TieBreakRule::ServerThenJob);
        let b = greedy_match(&g, &ActiveSet::all(2), TieBreakRule::JobThenServer);
        assert_eq!(pairs(&a), vec![(0, 1), (1, 0)]);
        assert_eq!(pairs(&b), vec![(1, 0), (0, 1)]);
    }

    #[test]
    fn active_set_bookkeeping() {
        let mut s = ActiveSet::all(3);
        assert!(s.remove(ServerId(1)));
        assert!(!s.remove(ServerId(1)));
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![ServerId(0), ServerId(2)]);
        assert_eq!(s.len(), 2);
        assert!(!s.contains(ServerId(7)));
    }
}
