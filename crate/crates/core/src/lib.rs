//! Online bipartite resource matching under per-server capacity budgets.
//!
//! Jobs arrive in timesteps. Each step the algorithm matches jobs to servers
//! (at most one job per server and one server per job), and a server may not
//! accept more total weight than its capacity over the whole horizon.
//!
//! The crate provides three online algorithms ([`online::online_greedy`],
//! [`online::random_online_greedy`], [`online::parallel_load_balance`]), an
//! exact offline optimum ([`oracle::offline_optimal`]), instance generators
//! and file I/O ([`instances`]), and a harness that measures competitive
//! ratios over parameter sweeps ([`harness`]).

pub mod greedy;
pub mod harness;
pub mod instances;
pub mod model;
pub mod online;
pub mod oracle;

pub use greedy::{greedy_match, ActiveSet, StepMatching, TieBreakRule};
pub use harness::{ratio, sweep, AlgorithmSpec, BoundCheck, RatioReport, SweepConfig, SweepResult};
pub use model::{
    allocation_value, is_feasible, validate_instance, Allocation, Edge, FeasibilityVerdict, Instance, JobId, ServerId,
    TimeStepGraph, WeightMode,
};
pub use online::{
    online_greedy, parallel_load_balance, random_online_greedy, AlgorithmKind, AlgorithmRun, OnlineGreedyConfig,
    TraceEvent,
};
pub use oracle::{offline_optimal, OracleResult, SearchBudget};
