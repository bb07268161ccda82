//! Problem data model: servers, per-timestep job graphs, allocations and the
//! feasibility predicate.
//!
//! An [`Instance`] is a list of server capacities plus an ordered sequence of
//! bipartite graphs, one per timestep. Jobs live in exactly one timestep, so a
//! [`JobId`] is the pair `(timestep, index)`.
//!
//! Weights are `f64` and every constraint is compared exactly (`<=`, no
//! tolerance). Instances are authored or generated on a 6-decimal grid, never
//! measured.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServerId(pub usize);

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JobId {
    pub timestep: usize,
    pub index: usize,
}

impl JobId {
    pub fn new(timestep: usize, index: usize) -> Self {
        JobId { timestep, index }
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "j{}@t{}", self.index, self.timestep)
    }
}

/// A job request `(server, job)` consuming `weight` resource units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub server: ServerId,
    pub job: JobId,
    pub weight: f64,
}

impl Edge {
    pub fn new(server: usize, job: JobId, weight: f64) -> Self {
        Edge {
            server: ServerId(server),
            job,
            weight,
        }
    }

    pub fn timestep(&self) -> usize {
        self.job.timestep
    }

    /// Canonical ordering key: timestep, job, server.
    pub(crate) fn key(&self) -> (usize, usize, usize) {
        (self.job.timestep, self.job.index, self.server.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{location}: capacity must be positive and finite, got {value}")]
    NonPositiveCapacity { location: String, value: f64 },
    #[error("{location}: weight must be nonnegative and finite, got {value}")]
    InvalidWeight { location: String, value: f64 },
    #[error("{location}: server {server} out of range (n = {n})")]
    UnknownServer {
        location: String,
        server: usize,
        n: usize,
    },
    #[error("{location}: job {job} is not listed in step {timestep}")]
    UnknownJob {
        location: String,
        job: usize,
        timestep: usize,
    },
    #[error("{location}: duplicate job index {job}")]
    DuplicateJob { location: String, job: usize },
    #[error("{location}: duplicate edge between server {server} and job {job}")]
    DuplicateEdge {
        location: String,
        server: usize,
        job: usize,
    },
    #[error("steps[{position}]: expected timestep {position}, found {found}")]
    NonContiguousSteps { position: usize, found: usize },
    #[error("edge {edge:?} does not belong to the instance")]
    ForeignEdge { edge: Edge },
    #[error("allocation representations disagree: {0}")]
    InconsistentAllocation(String),
    #[error("alpha must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),
}

/// `G(t)`: the jobs of one timestep and their edges to servers.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeStepGraph {
    timestep: usize,
    jobs: Vec<JobId>,
    edges: Vec<Edge>,
}

impl TimeStepGraph {
    /// Builds a step graph. `jobs` are job indices local to the step; `edges`
    /// are `(server, job index, weight)` triples. Server bounds are checked
    /// when the graph is placed into an [`Instance`].
    pub fn new(
        timestep: usize,
        jobs: impl IntoIterator<Item = usize>,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, ModelError> {
        let location = format!("steps[{timestep}]");
        let mut seen = BTreeSet::new();
        let mut job_ids = Vec::new();
        for j in jobs {
            if !seen.insert(j) {
                return Err(ModelError::DuplicateJob {
                    location: format!("{location}.jobs"),
                    job: j,
                });
            }
            job_ids.push(JobId::new(timestep, j));
        }
        let mut pairs = BTreeSet::new();
        let mut out = Vec::new();
        for (k, (server, job, weight)) in edges.into_iter().enumerate() {
            let loc = format!("{location}.edges[{k}]");
            if !seen.contains(&job) {
                return Err(ModelError::UnknownJob {
                    location: loc,
                    job,
                    timestep,
                });
            }
            if !(weight.is_finite() && weight >= 0.0) {
                return Err(ModelError::InvalidWeight {
                    location: loc,
                    value: weight,
                });
            }
            if !pairs.insert((server, job)) {
                return Err(ModelError::DuplicateEdge {
                    location: loc,
                    server,
                    job,
                });
            }
            out.push(Edge::new(server, JobId::new(timestep, job), weight));
        }
        Ok(TimeStepGraph {
            timestep,
            jobs: job_ids,
            edges: out,
        })
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    pub fn jobs(&self) -> &[JobId] {
        &self.jobs
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, server: ServerId, job: JobId) -> Option<&Edge> {
        self.edges
            .iter()
            .find(|e| e.server == server && e.job == job)
    }
}

/// Server capacities plus the ordered sequence of step graphs.
///
/// Immutable once built; all invariants are checked by [`Instance::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    name: String,
    capacities: Vec<f64>,
    steps: Vec<TimeStepGraph>,
}

impl Instance {
    pub fn new(
        name: impl Into<String>,
        capacities: Vec<f64>,
        steps: Vec<TimeStepGraph>,
    ) -> Result<Self, ModelError> {
        for (i, &c) in capacities.iter().enumerate() {
            if !(c.is_finite() && c > 0.0) {
                return Err(ModelError::NonPositiveCapacity {
                    location: format!("capacities[{i}]"),
                    value: c,
                });
            }
        }
        let n = capacities.len();
        for (position, step) in steps.iter().enumerate() {
            if step.timestep != position {
                return Err(ModelError::NonContiguousSteps {
                    position,
                    found: step.timestep,
                });
            }
            for (k, e) in step.edges.iter().enumerate() {
                if e.server.0 >= n {
                    return Err(ModelError::UnknownServer {
                        location: format!("steps[{position}].edges[{k}]"),
                        server: e.server.0,
                        n,
                    });
                }
            }
        }
        Ok(Instance {
            name: name.into(),
            capacities,
            steps,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn capacity(&self, server: ServerId) -> f64 {
        self.capacities[server.0]
    }

    pub fn num_servers(&self) -> usize {
        self.capacities.len()
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn steps(&self) -> &[TimeStepGraph] {
        &self.steps
    }

    pub fn step(&self, t: usize) -> &TimeStepGraph {
        &self.steps[t]
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.steps.iter().flat_map(|s| s.edges.iter())
    }

    /// Looks up the instance's own copy of an edge.
    pub fn find_edge(&self, server: ServerId, job: JobId) -> Option<&Edge> {
        self.steps.get(job.timestep)?.edge(server, job)
    }

    /// Copy of this instance with every edge rejected by `keep` dropped.
    pub(crate) fn filter_edges(&self, mut keep: impl FnMut(&Edge) -> bool) -> Instance {
        let steps = self
            .steps
            .iter()
            .map(|s| TimeStepGraph {
                timestep: s.timestep,
                jobs: s.jobs.clone(),
                edges: s.edges.iter().copied().filter(|e| keep(e)).collect(),
            })
            .collect();
        Instance {
            name: self.name.clone(),
            capacities: self.capacities.clone(),
            steps,
        }
    }
}

/// A set of accepted edges with its per-server and per-step views kept side
/// by side.
///
/// The shadow allocation of the randomized algorithm uses this type too, so
/// capacity is not enforced on insertion; use [`is_feasible`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Allocation {
    edges: Vec<Edge>,
    per_server_weight: Vec<f64>,
    per_step: BTreeMap<usize, Vec<Edge>>,
}

impl Allocation {
    pub fn new(num_servers: usize) -> Self {
        Allocation {
            edges: Vec::new(),
            per_server_weight: vec![0.0; num_servers],
            per_step: BTreeMap::new(),
        }
    }

    pub fn from_edges(num_servers: usize, edges: impl IntoIterator<Item = Edge>) -> Self {
        let mut alloc = Allocation::new(num_servers);
        for e in edges {
            alloc.push(e);
        }
        alloc
    }

    pub fn push(&mut self, edge: Edge) {
        let i = edge.server.0;
        if i >= self.per_server_weight.len() {
            self.per_server_weight.resize(i + 1, 0.0);
        }
        self.per_server_weight[i] += edge.weight;
        self.per_step.entry(edge.timestep()).or_default().push(edge);
        self.edges.push(edge);
    }

    /// Edges in insertion order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// `W(A_i)`, accumulated in insertion order.
    pub fn server_weight(&self, server: ServerId) -> f64 {
        self.per_server_weight.get(server.0).copied().unwrap_or(0.0)
    }

    pub fn per_server_weight(&self) -> &[f64] {
        &self.per_server_weight
    }

    pub fn step_edges(&self, t: usize) -> &[Edge] {
        self.per_step.get(&t).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn server_edges(&self, server: ServerId) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.server == server)
    }

    /// Edges sorted by (timestep, job, server).
    pub fn sorted_edges(&self) -> Vec<Edge> {
        let mut v = self.edges.clone();
        v.sort_by_key(Edge::key);
        v
    }

    /// Set equality on edges, ignoring insertion order.
    pub fn same_edges(&self, other: &Allocation) -> bool {
        let a = self.sorted_edges();
        let b = other.sorted_edges();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|(x, y)| x.key() == y.key() && x.weight.to_bits() == y.weight.to_bits())
    }

    pub fn value(&self) -> f64 {
        allocation_value(self)
    }

    fn check_consistency(&self) -> Result<(), ModelError> {
        let mut weights = vec![0.0; self.per_server_weight.len()];
        let mut per_step: BTreeMap<usize, Vec<Edge>> = BTreeMap::new();
        for e in &self.edges {
            weights[e.server.0] += e.weight;
            per_step.entry(e.timestep()).or_default().push(*e);
        }
        for (i, (&got, want)) in self.per_server_weight.iter().zip(weights).enumerate() {
            if got.to_bits() != want.to_bits() {
                return Err(ModelError::InconsistentAllocation(format!(
                    "server {i}: stored weight {got}, recomputed {want}"
                )));
            }
        }
        if per_step != self.per_step {
            return Err(ModelError::InconsistentAllocation(
                "per-step view does not match edge list".into(),
            ));
        }
        Ok(())
    }
}

/// `Σ w(e)` over the allocation, summed in canonical edge order so that equal
/// edge sets always produce bit-identical values.
pub fn allocation_value(alloc: &Allocation) -> f64 {
    alloc.sorted_edges().iter().map(|e| e.weight).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    MatchingServer,
    MatchingJob,
    Capacity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Offending timestep for matching violations.
    pub timestep: Option<usize>,
    pub server: Option<ServerId>,
    pub job: Option<JobId>,
    /// Server load for capacity violations.
    pub load: Option<f64>,
    pub capacity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum FeasibilityVerdict {
    Ok,
    Violation(Violation),
}

impl FeasibilityVerdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, FeasibilityVerdict::Ok)
    }
}

/// Checks the matching constraint of every step, in time order, and then the
/// capacity of every server, in index order; reports the first failure.
///
/// Edges must exist in `instance` with the same weight, and the allocation's
/// three views must agree; either failure is a structural error rather than a
/// verdict.
pub fn is_feasible(instance: &Instance, alloc: &Allocation) -> Result<FeasibilityVerdict, ModelError> {
    for e in alloc.edges() {
        match instance.find_edge(e.server, e.job) {
            Some(own) if own.weight.to_bits() == e.weight.to_bits() => {}
            _ => return Err(ModelError::ForeignEdge { edge: *e }),
        }
    }
    alloc.check_consistency()?;

    for (&t, edges) in &alloc.per_step {
        let mut servers = BTreeSet::new();
        let mut jobs = BTreeSet::new();
        for e in edges {
            if !servers.insert(e.server) {
                return Ok(FeasibilityVerdict::Violation(Violation {
                    kind: ViolationKind::MatchingServer,
                    timestep: Some(t),
                    server: Some(e.server),
                    job: Some(e.job),
                    load: None,
                    capacity: None,
                }));
            }
            if !jobs.insert(e.job) {
                return Ok(FeasibilityVerdict::Violation(Violation {
                    kind: ViolationKind::MatchingJob,
                    timestep: Some(t),
                    server: Some(e.server),
                    job: Some(e.job),
                    load: None,
                    capacity: None,
                }));
            }
        }
    }

    for (i, &cap) in instance.capacities().iter().enumerate() {
        let load = alloc.server_weight(ServerId(i));
        if load > cap {
            return Ok(FeasibilityVerdict::Violation(Violation {
                kind: ViolationKind::Capacity,
                timestep: None,
                server: Some(ServerId(i)),
                job: None,
                load: Some(load),
                capacity: Some(cap),
            }));
        }
    }
    Ok(FeasibilityVerdict::Ok)
}

/// How edge weights are checked against capacities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightMode {
    /// Flag edges with `w > C_i`, keep them.
    Unrestricted,
    /// Flag edges with `w > alpha * C_i`.
    AlphaBounded(f64),
    /// Drop edges with `w > C_i`; they can never be allocated.
    IgnoreOversize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Edge>,
    /// Edges dropped under [`WeightMode::IgnoreOversize`].
    pub removed: Vec<Edge>,
    /// The cleaned copy, only under [`WeightMode::IgnoreOversize`].
    pub instance: Option<Instance>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.removed.is_empty()
    }
}

pub fn validate_instance(instance: &Instance, mode: WeightMode) -> Result<ValidationReport, ModelError> {
    // Domain checks repeat what `Instance::new` enforces.
    for (i, &c) in instance.capacities().iter().enumerate() {
        if !(c.is_finite() && c > 0.0) {
            return Err(ModelError::NonPositiveCapacity {
                location: format!("capacities[{i}]"),
                value: c,
            });
        }
    }
    if let Some(e) = instance.edges().find(|e| !(e.weight.is_finite() && e.weight >= 0.0)) {
        return Err(ModelError::InvalidWeight {
            location: format!("{} / {}", e.server, e.job),
            value: e.weight,
        });
    }

    let oversize = |e: &Edge| e.weight > instance.capacity(e.server);
    match mode {
        WeightMode::Unrestricted => Ok(ValidationReport {
            violations: instance.edges().copied().filter(oversize).collect(),
            removed: Vec::new(),
            instance: None,
        }),
        WeightMode::AlphaBounded(alpha) => {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(ModelError::InvalidAlpha(alpha));
            }
            Ok(ValidationReport {
                violations: instance
                    .edges()
                    .copied()
                    .filter(|e| e.weight > alpha * instance.capacity(e.server))
                    .collect(),
                removed: Vec::new(),
                instance: None,
            })
        }
        WeightMode::IgnoreOversize => {
            let removed: Vec<Edge> = instance.edges().copied().filter(oversize).collect();
            let cleaned = instance.filter_edges(|e| !oversize(e));
            Ok(ValidationReport {
                violations: Vec::new(),
                removed,
                instance: Some(cleaned),
            })
        }
    }
}
