//! Named adversarial examples, seeded random families and the instance file
//! format.
//!
//! File format (JSON):
//!
//! ```json
//! { "name": "example2(n=2,eps=0.01)",
//!   "capacities": [1.0, 1.0],
//!   "steps": [ { "t": 0, "jobs": [0], "edges": [ { "server": 0, "job": 0, "w": 0.5 } ] } ] }
//! ```
//!
//! Multi-slot adwords instances fit this format directly: one job per ad
//! slot, one server per advertiser, capacities as budgets.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{Instance, ModelError, TimeStepGraph};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("invalid generator parameters: {0}")]
    Params(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Weight of the step-2 jobs of one server in the first example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BranchWeight {
    Zero,
    Heavy,
}

/// One of the four oblivious sequences realizing the adaptive adversary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Example1Branch(pub [BranchWeight; 2]);

impl Example1Branch {
    pub const ALL: [Example1Branch; 4] = [
        Example1Branch([BranchWeight::Zero, BranchWeight::Zero]),
        Example1Branch([BranchWeight::Zero, BranchWeight::Heavy]),
        Example1Branch([BranchWeight::Heavy, BranchWeight::Zero]),
        Example1Branch([BranchWeight::Heavy, BranchWeight::Heavy]),
    ];

    /// The branch an adaptive adversary picks after seeing which servers were
    /// matched in the first step.
    pub fn adversarial(matched: [bool; 2]) -> Self {
        Example1Branch(matched.map(|m| if m { BranchWeight::Heavy } else { BranchWeight::Zero }))
    }
}

impl fmt::Display for Example1Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for w in self.0 {
            f.write_str(match w {
                BranchWeight::Zero => "z",
                BranchWeight::Heavy => "h",
            })?;
        }
        Ok(())
    }
}

impl FromStr for Example1Branch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits: Vec<BranchWeight> = s
            .chars()
            .map(|c| match c {
                'z' | '0' => Ok(BranchWeight::Zero),
                'h' | '1' => Ok(BranchWeight::Heavy),
                other => Err(format!("branch character `{other}` is not one of z/h/0/1")),
            })
            .collect::<Result<_, _>>()?;
        match bits[..] {
            [a, b] => Ok(Example1Branch([a, b])),
            _ => Err(format!("branch `{s}` must have exactly two characters")),
        }
    }
}

/// Two servers of capacity `C`, two steps.
///
/// Step 0: server `i` has a single `epsilon` edge to its own job `i`.
/// Step 1: server `i` has an edge to its own job `i` of weight `C` or `0`
/// according to the branch.
pub fn gen_example1(capacity: f64, epsilon: f64, branch: Example1Branch) -> Result<Instance, InstanceError> {
    if !(capacity.is_finite() && capacity > 0.0) {
        return Err(InstanceError::Params(format!("capacity must be positive, got {capacity}")));
    }
    if !(epsilon > 0.0 && epsilon < capacity / 10.0) {
        return Err(InstanceError::Params(format!(
            "epsilon must lie in (0, C/10), got {epsilon} with C = {capacity}"
        )));
    }
    let first = TimeStepGraph::new(0, [0, 1], [(0, 0, epsilon), (1, 1, epsilon)])?;
    let w = |b: BranchWeight| match b {
        BranchWeight::Zero => 0.0,
        BranchWeight::Heavy => capacity,
    };
    let second = TimeStepGraph::new(1, [0, 1], [(0, 0, w(branch.0[0])), (1, 1, w(branch.0[1]))])?;
    Ok(Instance::new(
        format!("example1(C={capacity},eps={epsilon},branch={branch})"),
        vec![capacity; 2],
        vec![first, second],
    )?)
}

/// `n` unit-capacity servers, one job per step:
/// step 0 weighs 0.5 on server 0 and `0.5 - eps` elsewhere, step 1 weighs
/// `eps` on server 0, steps 2 and 3 weigh 0.5 on server 0; every other edge
/// is an explicit 0.
pub fn gen_example2(n: usize, epsilon: f64) -> Result<Instance, InstanceError> {
    if n < 2 {
        return Err(InstanceError::Params(format!("example2 needs n >= 2, got {n}")));
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(InstanceError::Params(format!("epsilon must lie in (0, 0.5), got {epsilon}")));
    }
    let step = |t: usize, first: f64, rest: f64| {
        TimeStepGraph::new(t, [0], (0..n).map(|i| (i, 0, if i == 0 { first } else { rest })))
    };
    let steps = vec![
        step(0, 0.5, 0.5 - epsilon)?,
        step(1, epsilon, 0.0)?,
        step(2, 0.5, 0.0)?,
        step(3, 0.5, 0.0)?,
    ];
    Ok(Instance::new(format!("example2(n={n},eps={epsilon})"), vec![1.0; n], steps)?)
}

/// One server of capacity `C`; a job of weight `C/2 - eps`, then one of `C`.
pub fn gen_example3(capacity: f64, epsilon: f64) -> Result<Instance, InstanceError> {
    if !(capacity.is_finite() && capacity > 0.0) {
        return Err(InstanceError::Params(format!("capacity must be positive, got {capacity}")));
    }
    if !(epsilon > 0.0 && epsilon < capacity / 2.0) {
        return Err(InstanceError::Params(format!("epsilon must lie in (0, C/2), got {epsilon}")));
    }
    let steps = vec![
        TimeStepGraph::new(0, [0], [(0, 0, capacity / 2.0 - epsilon)])?,
        TimeStepGraph::new(1, [0], [(0, 0, capacity)])?,
    ];
    Ok(Instance::new(
        format!("example3(C={capacity},eps={epsilon})"),
        vec![capacity],
        steps,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RandomFamily {
    /// `w(i,j) <= C_i`, heterogeneous capacities.
    General,
    /// `w(i,j) <= alpha * C_i`, heterogeneous capacities.
    Restricted { alpha: f64 },
    /// Identical servers; each job weighs the same on every server, `<= epsilon`.
    Parallel { epsilon: f64 },
}

impl fmt::Display for RandomFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RandomFamily::General => write!(f, "random_general"),
            RandomFamily::Restricted { alpha } => write!(f, "random_restricted({alpha})"),
            RandomFamily::Parallel { epsilon } => write!(f, "random_parallel({epsilon})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomSpec {
    pub family: RandomFamily,
    pub servers: usize,
    pub steps: usize,
    /// Each step carries between 1 and this many jobs.
    pub jobs_per_step: usize,
    /// Nominal capacity. Parallel instances use it exactly; the other
    /// families draw each `C_i` from `[C/2, 3C/2)`.
    pub capacity: f64,
    /// Probability that a given server-job edge exists (ignored for parallel).
    pub edge_density: f64,
    pub seed: u64,
}

impl RandomSpec {
    pub fn new(family: RandomFamily, servers: usize, steps: usize, jobs_per_step: usize, seed: u64) -> Self {
        RandomSpec {
            family,
            servers,
            steps,
            jobs_per_step,
            capacity: 1.0,
            edge_density: 0.75,
            seed,
        }
    }
}

impl FromStr for RandomFamily {
    type Err = InstanceError;

    /// `random_general`, `random_restricted(0.5)`, `random_parallel(0.05)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || InstanceError::Params(format!("unknown random family `{s}`"));
        let (name, arg) = match s.split_once('(') {
            Some((name, rest)) => {
                let arg = rest.strip_suffix(')').ok_or_else(bad)?;
                (name, Some(arg.trim().parse::<f64>().map_err(|_| bad())?))
            }
            None => (s, None),
        };
        match (name, arg) {
            ("random_general", None) => Ok(RandomFamily::General),
            ("random_restricted", Some(alpha)) if alpha > 0.0 && alpha <= 1.0 => Ok(RandomFamily::Restricted { alpha }),
            ("random_parallel", Some(epsilon)) if epsilon > 0.0 => Ok(RandomFamily::Parallel { epsilon }),
            _ => Err(bad()),
        }
    }
}

/// Parameters for any generator family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeneratorSpec {
    Example1 {
        capacity: f64,
        epsilon: f64,
        branch: Example1Branch,
    },
    Example2 {
        n: usize,
        epsilon: f64,
    },
    Example3 {
        capacity: f64,
        epsilon: f64,
    },
    Random(RandomSpec),
}

impl GeneratorSpec {
    pub fn generate(&self) -> Result<Instance, InstanceError> {
        match *self {
            GeneratorSpec::Example1 {
                capacity,
                epsilon,
                branch,
            } => gen_example1(capacity, epsilon, branch),
            GeneratorSpec::Example2 { n, epsilon } => gen_example2(n, epsilon),
            GeneratorSpec::Example3 { capacity, epsilon } => gen_example3(capacity, epsilon),
            GeneratorSpec::Random(spec) => gen_random(&spec),
        }
    }
}

const GRID: f64 = 1e6;

/// Uniform draw from `[0, upper)` snapped to the 6-decimal grid and kept
/// `<= upper`.
fn draw_weight(rng: &mut ChaCha8Rng, upper: f64) -> f64 {
    let raw: f64 = rng.gen_range(0.0..upper);
    let mut ticks = (raw * GRID).round();
    while ticks > 0.0 && ticks / GRID > upper {
        ticks -= 1.0;
    }
    ticks / GRID
}

fn snap(x: f64) -> f64 {
    (x * GRID).round() / GRID
}

pub fn gen_random(spec: &RandomSpec) -> Result<Instance, InstanceError> {
    if spec.servers == 0 || spec.jobs_per_step == 0 {
        return Err(InstanceError::Params("servers and jobs_per_step must be positive".into()));
    }
    if !(spec.capacity.is_finite() && spec.capacity > 0.0) {
        return Err(InstanceError::Params(format!("capacity must be positive, got {}", spec.capacity)));
    }
    if !(0.0..=1.0).contains(&spec.edge_density) {
        return Err(InstanceError::Params(format!("edge density {} not in [0, 1]", spec.edge_density)));
    }
    match spec.family {
        RandomFamily::Restricted { alpha } if !(alpha > 0.0 && alpha <= 1.0) => {
            return Err(InstanceError::Params(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        RandomFamily::Parallel { epsilon } if !(epsilon > 0.0 && epsilon <= spec.capacity) => {
            return Err(InstanceError::Params(format!("epsilon must lie in (0, C], got {epsilon}")));
        }
        _ => {}
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.servers;
    let capacities: Vec<f64> = match spec.family {
        RandomFamily::Parallel { .. } => vec![spec.capacity; n],
        _ => (0..n)
            .map(|_| {
                let c = snap(rng.gen_range(0.5 * spec.capacity..1.5 * spec.capacity));
                if c > 0.0 {
                    c
                } else {
                    spec.capacity
                }
            })
            .collect(),
    };

    let mut steps = Vec::with_capacity(spec.steps);
    for t in 0..spec.steps {
        let jobs = rng.gen_range(1..=spec.jobs_per_step);
        let mut edges = Vec::new();
        for j in 0..jobs {
            match spec.family {
                RandomFamily::Parallel { epsilon } => {
                    let w = draw_weight(&mut rng, epsilon);
                    edges.extend((0..n).map(|i| (i, j, w)));
                }
                RandomFamily::General | RandomFamily::Restricted { .. } => {
                    for (i, &cap) in capacities.iter().enumerate() {
                        if !rng.gen_bool(spec.edge_density) {
                            continue;
                        }
                        let upper = match spec.family {
                            RandomFamily::Restricted { alpha } => alpha * cap,
                            _ => cap,
                        };
                        edges.push((i, j, draw_weight(&mut rng, upper)));
                    }
                }
            }
        }
        steps.push(TimeStepGraph::new(t, 0..jobs, edges)?);
    }
    let name = format!(
        "{}(n={},T={},jobs={},C={},seed={})",
        spec.family, spec.servers, spec.steps, spec.jobs_per_step, spec.capacity, spec.seed
    );
    Ok(Instance::new(name, capacities, steps)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeFile {
    server: usize,
    job: usize,
    w: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct StepFile {
    t: usize,
    jobs: Vec<usize>,
    edges: Vec<EdgeFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceFile {
    name: String,
    capacities: Vec<f64>,
    steps: Vec<StepFile>,
}

const TOP_FIELDS: &[&str] = &["name", "capacities", "steps"];
const STEP_FIELDS: &[&str] = &["t", "jobs", "edges"];
const EDGE_FIELDS: &[&str] = &["server", "job", "w"];

fn unknown_fields(value: &Value) -> Vec<String> {
    fn check(obj: &Value, allowed: &[&str], path: &str, out: &mut Vec<String>) {
        if let Value::Object(map) = obj {
            for key in map.keys() {
                if !allowed.contains(&key.as_str()) {
                    out.push(if path.is_empty() {
                        key.clone()
                    } else {
                        format!("{path}.{key}")
                    });
                }
            }
        }
    }
    let mut out = Vec::new();
    check(value, TOP_FIELDS, "", &mut out);
    if let Some(Value::Array(steps)) = value.get("steps") {
        for (k, step) in steps.iter().enumerate() {
            let path = format!("steps[{k}]");
            check(step, STEP_FIELDS, &path, &mut out);
            if let Some(Value::Array(edges)) = step.get("edges") {
                for (m, edge) in edges.iter().enumerate() {
                    check(edge, EDGE_FIELDS, &format!("{path}.edges[{m}]"), &mut out);
                }
            }
        }
    }
    out
}

/// Parses instance text. Unknown fields are an error when `strict`, otherwise
/// a logged warning.
pub fn parse_instance(text: &str, strict: bool) -> Result<Instance, InstanceError> {
    let value: Value = serde_json::from_str(text).map_err(|e| InstanceError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let unknown = unknown_fields(&value);
    if let Some(first) = unknown.first() {
        if strict {
            return Err(InstanceError::Schema {
                path: first.clone(),
                message: "unknown field".into(),
            });
        }
        for path in &unknown {
            warn!("ignoring unknown field `{path}`");
        }
    }
    let file: InstanceFile = serde_json::from_value(value).map_err(|e| InstanceError::Schema {
        path: "instance".into(),
        message: e.to_string(),
    })?;

    let mut steps = Vec::with_capacity(file.steps.len());
    for step in file.steps {
        steps.push(TimeStepGraph::new(
            step.t,
            step.jobs,
            step.edges.into_iter().map(|e| (e.server, e.job, e.w)),
        )?);
    }
    Ok(Instance::new(file.name, file.capacities, steps)?)
}

pub fn instance_to_string(instance: &Instance) -> String {
    let file = InstanceFile {
        name: instance.name().to_string(),
        capacities: instance.capacities().to_vec(),
        steps: instance
            .steps()
            .iter()
            .map(|s| StepFile {
                t: s.timestep(),
                jobs: s.jobs().iter().map(|j| j.index).collect(),
                edges: s
                    .edges()
                    .iter()
                    .map(|e| EdgeFile {
                        server: e.server.0,
                        job: e.job.index,
                        w: e.weight,
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("instance serializes")
}

pub fn read_instance(path: impl AsRef<Path>, strict: bool) -> Result<Instance, InstanceError> {
    parse_instance(&fs::read_to_string(path)?, strict)
}

pub fn write_instance(instance: &Instance, path: impl AsRef<Path>) -> Result<(), InstanceError> {
    let mut text = instance_to_string(instance);
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_instance, WeightMode};
    use crate::online::parallel_profile;

    #[test]
    fn example_parameter_bounds() {
        assert!(gen_example1(1.0, 0.2, Example1Branch::ALL[0]).is_err());
        assert!(gen_example1(1.0, 0.0, Example1Branch::ALL[0]).is_err());
        assert!(gen_example2(1, 0.1).is_err());
        assert!(gen_example2(3, 0.5).is_err());
        assert!(gen_example3(1.0, 0.5).is_err());
        assert!(gen_example3(-1.0, 0.1).is_err());
    }

    #[test]
    fn family_names_round_trip() {
        for f in [
            RandomFamily::General,
            RandomFamily::Restricted { alpha: 0.25 },
            RandomFamily::Parallel { epsilon: 0.05 },
        ] {
            assert_eq!(f.to_string().parse::<RandomFamily>().unwrap(), f);
        }
        for bad in ["random_restricted", "random_parallel(x)", "random_general(1)", "other", "random_restricted(1.5"] {
            assert!(bad.parse::<RandomFamily>().is_err(), "{bad}");
        }
    }

    #[test]
    fn example2_shape() {
        let inst = gen_example2(3, 0.01).unwrap();
        assert_eq!(inst.num_steps(), 4);
        assert_eq!(inst.capacities(), &[1.0, 1.0, 1.0]);
        let w: Vec<f64> = inst.step(0).edges().iter().map(|e| e.weight).collect();
        assert_eq!(w, vec![0.5, 0.49, 0.49]);
        let w: Vec<f64> = inst.step(1).edges().iter().map(|e| e.weight).collect();
        assert_eq!(w, vec![0.01, 0.0, 0.0]);
        assert!(validate_instance(&inst, WeightMode::AlphaBounded(0.5)).unwrap().is_clean());
    }

    #[test]
    fn example1_branches() {
        for b in Example1Branch::ALL {
            let inst = gen_example1(1.0, 1e-3, b).unwrap();
            assert_eq!(inst.num_servers(), 2);
            assert_eq!(inst.step(1).edges().len(), 2);
            assert_eq!(b.to_string().parse::<Example1Branch>().unwrap(), b);
        }
        assert_eq!(
            Example1Branch::adversarial([true, false]).to_string(),
            "hz"
        );
        assert!("hzh".parse::<Example1Branch>().is_err());
    }

    #[test]
    fn random_generation_is_deterministic() {
        for family in [
            RandomFamily::General,
            RandomFamily::Restricted { alpha: 0.5 },
            RandomFamily::Parallel { epsilon: 0.1 },
        ] {
            let spec = RandomSpec::new(family, 3, 4, 3, 17);
            assert_eq!(gen_random(&spec).unwrap(), gen_random(&spec).unwrap());
            let other = RandomSpec { seed: 18, ..spec };
            assert_ne!(gen_random(&spec).unwrap(), gen_random(&other).unwrap());
        }
    }

    #[test]
    fn random_families_honour_their_weight_modes() {
        for seed in 0..50 {
            let spec = RandomSpec::new(RandomFamily::Restricted { alpha: 0.5 }, 3, 4, 3, seed);
            let inst = gen_random(&spec).unwrap();
            assert!(validate_instance(&inst, WeightMode::AlphaBounded(0.5)).unwrap().violations.is_empty());

            let spec = RandomSpec::new(RandomFamily::General, 3, 4, 3, seed);
            let inst = gen_random(&spec).unwrap();
            assert!(validate_instance(&inst, WeightMode::Unrestricted).unwrap().violations.is_empty());

            let spec = RandomSpec {
                capacity: 1.0,
                ..RandomSpec::new(RandomFamily::Parallel { epsilon: 0.1 }, 3, 4, 3, seed)
            };
            let inst = gen_random(&spec).unwrap();
            let profile = parallel_profile(&inst).unwrap();
            assert!(profile.epsilon <= 0.1);
            for e in inst.edges() {
                assert_eq!(e.weight, (e.weight * 1e6).round() / 1e6);
            }
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let inst = gen_example2(2, 0.01).unwrap();
        let back = parse_instance(&instance_to_string(&inst), true).unwrap();
        assert_eq!(back, inst);
        let inst = gen_random(&RandomSpec::new(RandomFamily::General, 3, 4, 3, 5)).unwrap();
        let back = parse_instance(&instance_to_string(&inst), true).unwrap();
        assert!(back.edges().zip(inst.edges()).all(|(a, b)| a.weight.to_bits() == b.weight.to_bits()));
    }

    #[test]
    fn negative_capacity_is_rejected() {
        let text = r#"{"name":"x","capacities":[1.0,-2.0],"steps":[]}"#;
        let err = parse_instance(text, true).unwrap_err();
        assert!(err.to_string().contains("capacities[1]"), "{err}");
    }

    #[test]
    fn unknown_fields_strict_and_lenient() {
        let text = r#"{"name":"x","capacities":[1.0],"steps":[{"t":0,"jobs":[0],"edges":[{"server":0,"job":0,"w":0.5,"color":"red"}]}]}"#;
        match parse_instance(text, true) {
            Err(InstanceError::Schema { path, .. }) => assert_eq!(path, "steps[0].edges[0].color"),
            other => panic!("expected schema error, got {other:?}"),
        }
        let inst = parse_instance(text, false).unwrap();
        assert_eq!(inst.edges().count(), 1);
    }

    #[test]
    fn syntax_errors_carry_location() {
        let text = "{\n  \"name\": \"x\",\n  \"capacities\": [1.0,,]\n}";
        match parse_instance(text, true) {
            Err(InstanceError::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }
}
