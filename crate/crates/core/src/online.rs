//! Online algorithms. Each consumes an [`Instance`] one step at a time and
//! never looks ahead.
//!
//! * [`online_greedy`]: greedy matching over active servers; a server is
//!   retired once its load strictly exceeds `(1 - alpha) * C_i`.
//! * [`random_online_greedy`]: the same greedy loop drives a coin-independent
//!   shadow allocation `B`; each server's coin then keeps only its heavy
//!   (`w > C_i/2`) or only its light edges in the output `A`.
//! * [`parallel_load_balance`]: identical machines, jobs in decreasing weight,
//!   each to the least-loaded machine not yet used in the step.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::greedy::{greedy_match, ActiveSet, TieBreakRule};
use crate::model::{is_feasible, Allocation, Edge, FeasibilityVerdict, Instance, JobId, ModelError, ServerId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgorithmError {
    #[error("alpha must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("edge {edge:?} exceeds alpha * capacity = {bound}")]
    StrictWeight { edge: Edge, bound: f64 },
    #[error("edge {edge:?} exceeds its server capacity; drop oversize edges first")]
    OversizeEdge { edge: Edge },
    #[error("instance is not parallel: {0}")]
    NotParallel(String),
    #[error("at least one Monte Carlo trial is required")]
    ZeroTrials,
    #[error("coin vector covers {got} servers, instance has {want}")]
    CoinCount { got: usize, want: usize },
    #[error("trace event {position} does not match the instance: {reason}")]
    TraceMismatch { position: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AlgorithmKind {
    #[serde(rename = "onlinegreedy")]
    OnlineGreedy,
    #[serde(rename = "randomgreedy")]
    RandomOnlineGreedy,
    #[serde(rename = "loadbalance")]
    ParallelLoadBalance,
}

impl AlgorithmKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmKind::OnlineGreedy => "onlinegreedy",
            AlgorithmKind::RandomOnlineGreedy => "randomgreedy",
            AlgorithmKind::ParallelLoadBalance => "loadbalance",
        }
    }
}

impl std::fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AlgorithmKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "onlinegreedy" => Ok(AlgorithmKind::OnlineGreedy),
            "randomgreedy" => Ok(AlgorithmKind::RandomOnlineGreedy),
            "loadbalance" => Ok(AlgorithmKind::ParallelLoadBalance),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

/// Per-server coin. Heads keeps only heavy edges, tails only light ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coin {
    Heads,
    Tails,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Coin { server: ServerId, coin: Coin },
    /// Edge entered `M(t)`; for the randomized algorithm this is `B`.
    Matched { edge: Edge },
    /// Edge entered the output allocation `A`.
    Accepted { edge: Edge },
    Deactivated { server: ServerId, timestep: usize },
    StepEnd { timestep: usize },
    /// Load balancer hit a job that does not fit; the run stops here.
    EarlyReturn { timestep: usize, job: JobId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmRun {
    pub algorithm: AlgorithmKind,
    pub allocation: Allocation,
    pub value: f64,
    pub trace: Vec<TraceEvent>,
    pub rng_seed: Option<u64>,
    pub feasibility: FeasibilityVerdict,
}

impl AlgorithmRun {
    fn finish(
        instance: &Instance,
        algorithm: AlgorithmKind,
        allocation: Allocation,
        trace: Vec<TraceEvent>,
        rng_seed: Option<u64>,
    ) -> Result<Self, AlgorithmError> {
        let feasibility = is_feasible(instance, &allocation)?;
        Ok(AlgorithmRun {
            algorithm,
            value: allocation.value(),
            allocation,
            trace,
            rng_seed,
            feasibility,
        })
    }

    /// Servers in the order they were deactivated, with the step.
    pub fn deactivations(&self) -> Vec<(ServerId, usize)> {
        self.trace
            .iter()
            .filter_map(|ev| match *ev {
                TraceEvent::Deactivated { server, timestep } => Some((server, timestep)),
                _ => None,
            })
            .collect()
    }

    pub fn early_return(&self) -> Option<(usize, JobId)> {
        self.trace.iter().find_map(|ev| match *ev {
            TraceEvent::EarlyReturn { timestep, job } => Some((timestep, job)),
            _ => None,
        })
    }

    pub fn to_record(&self) -> RunRecord {
        RunRecord {
            algorithm: self.algorithm,
            value: self.value,
            edges: self.allocation.edges().iter().map(EdgeRecord::from).collect(),
            trace: self.trace.clone(),
            seed: self.rng_seed,
            feasibility: self.feasibility.clone(),
        }
    }
}

/// Edge as written in instance and run files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub t: usize,
    pub server: usize,
    pub job: usize,
    pub w: f64,
}

impl From<&Edge> for EdgeRecord {
    fn from(e: &Edge) -> Self {
        EdgeRecord {
            t: e.job.timestep,
            server: e.server.0,
            job: e.job.index,
            w: e.weight,
        }
    }
}

/// Serialized form of an [`AlgorithmRun`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: AlgorithmKind,
    pub value: f64,
    pub edges: Vec<EdgeRecord>,
    pub trace: Vec<TraceEvent>,
    pub seed: Option<u64>,
    pub feasibility: FeasibilityVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineGreedyConfig {
    /// Servers retire once their load exceeds `(1 - alpha) * C_i`.
    pub alpha: f64,
    /// Reject instances with any `w(i,j) > alpha * C_i` up front.
    pub strict_weights: bool,
    pub tie_break: TieBreakRule,
}

impl Default for OnlineGreedyConfig {
    fn default() -> Self {
        OnlineGreedyConfig {
            alpha: 0.5,
            strict_weights: false,
            tie_break: TieBreakRule::default(),
        }
    }
}

impl OnlineGreedyConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        OnlineGreedyConfig {
            alpha,
            ..Default::default()
        }
    }

    pub fn strict(mut self) -> Self {
        self.strict_weights = true;
        self
    }
}

pub fn online_greedy(instance: &Instance, config: &OnlineGreedyConfig) -> Result<AlgorithmRun, AlgorithmError> {
    let alpha = config.alpha;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(AlgorithmError::InvalidAlpha(alpha));
    }
    if config.strict_weights {
        for e in instance.edges() {
            let bound = alpha * instance.capacity(e.server);
            if e.weight > bound {
                return Err(AlgorithmError::StrictWeight { edge: *e, bound });
            }
        }
    }

    let n = instance.num_servers();
    let mut active = ActiveSet::all(n);
    let mut alloc = Allocation::new(n);
    let mut trace = Vec::new();
    for graph in instance.steps() {
        let t = graph.timestep();
        let matching = greedy_match(graph, &active, config.tie_break);
        for e in &matching.edges {
            alloc.push(*e);
            trace.push(TraceEvent::Accepted { edge: *e });
        }
        for e in &matching.edges {
            let threshold = (1.0 - alpha) * instance.capacity(e.server);
            if alloc.server_weight(e.server) > threshold && active.remove(e.server) {
                trace.push(TraceEvent::Deactivated {
                    server: e.server,
                    timestep: t,
                });
            }
        }
        trace.push(TraceEvent::StepEnd { timestep: t });
    }
    AlgorithmRun::finish(instance, AlgorithmKind::OnlineGreedy, alloc, trace, None)
}

/// One coin per server, fixed before the first step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoinVector {
    pub coins: Vec<Coin>,
    pub seed: Option<u64>,
}

impl CoinVector {
    /// Coin `k` is drawn from its own ChaCha stream `k` under `seed`, so adding
    /// servers never changes the coins of existing ones.
    pub fn from_seed(seed: u64, num_servers: usize) -> Self {
        let coins = (0..num_servers)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                if rng.gen::<bool>() {
                    Coin::Heads
                } else {
                    Coin::Tails
                }
            })
            .collect();
        CoinVector {
            coins,
            seed: Some(seed),
        }
    }

    /// Bit `k` of `mask` set means server `k` shows heads.
    pub fn from_mask(mask: u64, num_servers: usize) -> Self {
        let coins = (0..num_servers)
            .map(|k| if mask >> k & 1 == 1 { Coin::Heads } else { Coin::Tails })
            .collect();
        CoinVector { coins, seed: None }
    }

    pub fn uniform(coin: Coin, num_servers: usize) -> Self {
        CoinVector {
            coins: vec![coin; num_servers],
            seed: None,
        }
    }

    pub fn coin(&self, server: ServerId) -> Coin {
        self.coins[server.0]
    }
}

/// Heavy (`X_i`) and light (`Y_i`) parts of one server's shadow edges.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeavyLight {
    pub heavy: Vec<Edge>,
    pub light: Vec<Edge>,
}

impl HeavyLight {
    pub fn heavy_weight(&self) -> f64 {
        self.heavy.iter().map(|e| e.weight).sum()
    }

    pub fn light_weight(&self) -> f64 {
        self.light.iter().map(|e| e.weight).sum()
    }
}

/// The coin-independent shadow allocation `B`, the coin-filtered output `A`
/// and the per-server heavy/light split of `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowPair {
    pub shadow: Allocation,
    pub accepted: Allocation,
    pub split: Vec<HeavyLight>,
    pub coins: CoinVector,
}

/// `C_i/2 < w <= C_i`.
pub fn is_heavy(weight: f64, capacity: f64) -> bool {
    weight > capacity / 2.0
}

pub fn random_online_greedy(instance: &Instance, seed: u64) -> Result<(AlgorithmRun, ShadowPair), AlgorithmError> {
    let coins = CoinVector::from_seed(seed, instance.num_servers());
    random_online_greedy_with_coins(instance, &coins)
}

/// Runs the randomized algorithm with a fixed coin vector.
pub fn random_online_greedy_with_coins(
    instance: &Instance,
    coins: &CoinVector,
) -> Result<(AlgorithmRun, ShadowPair), AlgorithmError> {
    let n = instance.num_servers();
    if coins.coins.len() != n {
        return Err(AlgorithmError::CoinCount {
            got: coins.coins.len(),
            want: n,
        });
    }
    if let Some(e) = instance.edges().find(|e| e.weight > instance.capacity(e.server)) {
        return Err(AlgorithmError::OversizeEdge { edge: *e });
    }

    let mut trace: Vec<TraceEvent> = coins
        .coins
        .iter()
        .enumerate()
        .map(|(k, &coin)| TraceEvent::Coin {
            server: ServerId(k),
            coin,
        })
        .collect();
    let mut active = ActiveSet::all(n);
    let mut shadow = Allocation::new(n);
    let mut accepted = Allocation::new(n);
    let mut split = vec![HeavyLight::default(); n];

    for graph in instance.steps() {
        let t = graph.timestep();
        let matching = greedy_match(graph, &active, TieBreakRule::default());
        for e in &matching.edges {
            let i = e.server;
            let cap = instance.capacity(i);
            shadow.push(*e);
            trace.push(TraceEvent::Matched { edge: *e });
            if shadow.server_weight(i) > cap / 2.0 && active.remove(i) {
                trace.push(TraceEvent::Deactivated { server: i, timestep: t });
            }
            let heavy = is_heavy(e.weight, cap);
            if heavy {
                split[i.0].heavy.push(*e);
            } else {
                split[i.0].light.push(*e);
            }
            let keep = match coins.coin(i) {
                Coin::Heads => heavy,
                Coin::Tails => !heavy,
            };
            if keep {
                accepted.push(*e);
                trace.push(TraceEvent::Accepted { edge: *e });
            }
        }
        trace.push(TraceEvent::StepEnd { timestep: t });
    }

    let run = AlgorithmRun::finish(
        instance,
        AlgorithmKind::RandomOnlineGreedy,
        accepted.clone(),
        trace,
        coins.seed,
    )?;
    Ok((
        run,
        ShadowPair {
            shadow,
            accepted,
            split,
            coins: coins.clone(),
        },
    ))
}

/// `E[W(A)] = Σ_i ½ (W(X_i) + W(Y_i))`.
///
/// Exact because the shadow and its split never depend on the coins.
pub fn expected_value_exact(shadow: &ShadowPair) -> f64 {
    shadow
        .split
        .iter()
        .map(|s| 0.5 * (s.heavy_weight() + s.light_weight()))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: u64,
}

/// Seed of trial `trial` under a master seed.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng.next_u64()
}

pub fn random_online_greedy_mc(instance: &Instance, trials: u64, seed: u64) -> Result<MonteCarloEstimate, AlgorithmError> {
    if trials == 0 {
        return Err(AlgorithmError::ZeroTrials);
    }
    let mut values = Vec::with_capacity(trials as usize);
    for k in 0..trials {
        let (run, _) = random_online_greedy(instance, trial_seed(seed, k))?;
        values.push(run.value);
    }
    let count = trials as f64;
    let mean = values.iter().sum::<f64>() / count;
    let std_error = if trials > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
        (var / count).sqrt()
    } else {
        0.0
    };
    Ok(MonteCarloEstimate { mean, std_error, trials })
}

/// Capacity and job weights of an instance whose servers are identical.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelProfile {
    pub capacity: f64,
    /// Largest job weight.
    pub epsilon: f64,
    /// Per step, `(job, weight)` in job order.
    pub jobs: Vec<Vec<(JobId, f64)>>,
}

/// Checks that all capacities are equal and every job has one edge per server
/// carrying the same weight (bit-identical).
pub fn parallel_profile(instance: &Instance) -> Result<ParallelProfile, AlgorithmError> {
    let n = instance.num_servers();
    let caps = instance.capacities();
    let capacity = caps.first().copied().unwrap_or(0.0);
    if caps.iter().any(|c| c.to_bits() != capacity.to_bits()) {
        return Err(AlgorithmError::NotParallel("capacities differ".into()));
    }
    let mut epsilon: f64 = 0.0;
    let mut jobs = Vec::with_capacity(instance.num_steps());
    for graph in instance.steps() {
        let mut step = Vec::with_capacity(graph.jobs().len());
        for &job in graph.jobs() {
            let mut weight = None;
            let mut count = 0;
            for e in graph.edges().iter().filter(|e| e.job == job) {
                count += 1;
                match weight {
                    None => weight = Some(e.weight),
                    Some(w) if f64::to_bits(w) == e.weight.to_bits() => {}
                    Some(_) => {
                        return Err(AlgorithmError::NotParallel(format!(
                            "job {job} has different weights on different servers"
                        )))
                    }
                }
            }
            if count != n {
                return Err(AlgorithmError::NotParallel(format!(
                    "job {job} has {count} edges, expected one per server ({n})"
                )));
            }
            let w = weight.unwrap_or(0.0);
            epsilon = epsilon.max(w);
            step.push((job, w));
        }
        jobs.push(step);
    }
    Ok(ParallelProfile {
        capacity,
        epsilon,
        jobs,
    })
}

pub fn parallel_load_balance(instance: &Instance) -> Result<AlgorithmRun, AlgorithmError> {
    let profile = parallel_profile(instance)?;
    let n = instance.num_servers();
    let cap = profile.capacity;
    let mut alloc = Allocation::new(n);
    let mut trace = Vec::new();

    'steps: for (t, step) in profile.jobs.iter().enumerate() {
        let mut order = step.clone();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.index.cmp(&b.0.index)));
        let mut used = vec![false; n];
        for (job, w) in order {
            // Highest remaining capacity is lowest load since capacities match.
            let Some(i) = (0..n)
                .filter(|&i| !used[i])
                .min_by(|&a, &b| {
                    let la = alloc.server_weight(ServerId(a));
                    let lb = alloc.server_weight(ServerId(b));
                    la.total_cmp(&lb).then(a.cmp(&b))
                })
            else {
                break;
            };
            let server = ServerId(i);
            if alloc.server_weight(server) + w <= cap {
                let edge = *instance
                    .find_edge(server, job)
                    .expect("parallel profile guarantees an edge per server");
                alloc.push(edge);
                used[i] = true;
                trace.push(TraceEvent::Accepted { edge });
            } else {
                trace.push(TraceEvent::EarlyReturn { timestep: t, job });
                break 'steps;
            }
        }
        trace.push(TraceEvent::StepEnd { timestep: t });
    }
    AlgorithmRun::finish(instance, AlgorithmKind::ParallelLoadBalance, alloc, trace, None)
}

/// Rebuilds the output allocation from a trace, checking every recorded edge
/// against the instance.
pub fn replay_trace(instance: &Instance, trace: &[TraceEvent]) -> Result<Allocation, AlgorithmError> {
    let mut alloc = Allocation::new(instance.num_servers());
    let check = |position: usize, edge: &Edge| -> Result<(), AlgorithmError> {
        match instance.find_edge(edge.server, edge.job) {
            Some(own) if own.weight.to_bits() == edge.weight.to_bits() => Ok(()),
            Some(own) => Err(AlgorithmError::TraceMismatch {
                position,
                reason: format!("weight {} differs from instance weight {}", edge.weight, own.weight),
            }),
            None => Err(AlgorithmError::TraceMismatch {
                position,
                reason: format!("no edge {} - {} in instance", edge.server, edge.job),
            }),
        }
    };
    for (position, ev) in trace.iter().enumerate() {
        match ev {
            TraceEvent::Accepted { edge } => {
                check(position, edge)?;
                alloc.push(*edge);
            }
            TraceEvent::Matched { edge } => check(position, edge)?,
            TraceEvent::Deactivated { server, .. } | TraceEvent::Coin { server, .. } => {
                if server.0 >= instance.num_servers() {
                    return Err(AlgorithmError::TraceMismatch {
                        position,
                        reason: format!("unknown server {server}"),
                    });
                }
            }
            TraceEvent::StepEnd { timestep } | TraceEvent::EarlyReturn { timestep, .. } => {
                if *timestep >= instance.num_steps() {
                    return Err(AlgorithmError::TraceMismatch {
                        position,
                        reason: format!("unknown timestep {timestep}"),
                    });
                }
            }
        }
    }
    Ok(alloc)
}
