//! Scenario files, bundled presets, single runs and parameter sweeps.
//!
//! A scenario is a TOML document with the sections `graph`, `problem`,
//! `algorithm` (required) and `sim`, `transport`, `init`, `output`,
//! `convergence` (optional). Agent ids and coordinates are 1-based in files.
//! Parsing reports every problem it finds at once: unknown keys, type
//! errors per section, then semantic checks.
//!
//! ```toml
//! name = "tiny"
//!
//! [graph]
//! kind = "path"          # ring | path | complete | edges
//! n = 2
//! a = 1.0
//! b = 1.0
//!
//! [problem]
//! family = "quadratic"   # quadratic | partial-quadratic | constrained-quadratic | localization2d
//! dim = 1
//! targets = [[0.0], [2.0]]
//!
//! [algorithm]
//! kind = "pi-consensus"  # gradient-consensus | pi-consensus | constrained
//! alpha = 1.0
//!
//! [sim]
//! h = 0.001
//! t_end = 20.0
//!
//! [transport]
//! mode = "scattering"    # ideal | naive-delay | scattering
//! eta = 1.0
//! delays = { mode = "uniform", value = 0.3 }
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::dynamics::{Algorithm, SwarmState};
use crate::graph::NetworkGraph;
use crate::monitors::{self, DissipationCheck, MonitorContext, OnlineMonitor, TerminalMetrics};
use crate::oracle::{self, OracleError, OracleSolution};
use crate::problem::{
    constrained_quadratic_problem, localization2d_problem, partial_quadratic_problem, quadratic_problem,
    Halfplane, LinearConstraint, ProblemInstance, Segment,
};
use crate::simulator::{self, DelaySpec, RunMetadata, Sample, SimConfig, SimError, Telemetry};

pub const GRAPH_KINDS: [&str; 4] = ["ring", "path", "complete", "edges"];
pub const PROBLEM_FAMILIES: [&str; 4] = [
    "quadratic",
    "partial-quadratic",
    "constrained-quadratic",
    "localization2d",
];
pub const TRANSPORT_MODES: [&str; 3] = ["ideal", "naive-delay", "scattering"];

/// Exit status of a run that finished without meeting the convergence criteria
/// and without diverging.
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub i: usize,
    pub j: usize,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub kind: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<EdgeSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub a: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfplaneSpec {
    pub normal: [f64; 2],
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Per-agent targets; one-element lists for `partial-quadratic`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<Vec<f64>>>,
    /// Per-agent SPD weights as lists of rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<Vec<f64>>>>,
    /// 1-based owned coordinate per agent (`partial-quadratic`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<Vec<Vec<ConstraintSpec>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slater_point: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<[[f64; 2]; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halfplanes: Option<Vec<Vec<HalfplaneSpec>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub kind: String,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSpec {
    pub h: f64,
    pub t_end: f64,
    pub seed: u64,
    pub record_stride: usize,
    pub q_mineig_floor: f64,
    pub blowup_threshold: f64,
}

impl Default for SimSpec {
    fn default() -> Self {
        let d = SimConfig::default();
        SimSpec {
            h: d.h,
            t_end: d.t_end,
            seed: d.seed,
            record_stride: d.record_stride,
            q_mineig_floor: d.q_mineig_floor,
            blowup_threshold: d.blowup_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportSpec {
    pub mode: String,
    pub eta: f64,
    pub delays: DelaySpec,
}

impl Default for TransportSpec {
    fn default() -> Self {
        TransportSpec {
            mode: "ideal".into(),
            eta: 1.0,
            delays: DelaySpec::default(),
        }
    }
}

/// Initial state. Missing `x` is drawn per agent from the family's sampler
/// with the scenario seed; missing `xi` and `rho` are zero. Vectors are
/// stacked agent by agent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct InitSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Include per-link port and wave values in the recorded samples.
    pub record_links: bool,
    /// Evaluate storage functions and dissipation checks during the run.
    pub monitors: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: None,
            record_links: false,
            monitors: true,
        }
    }
}

/// Thresholds for "converged" in the run summary and exit status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceSpec {
    /// Terminal `max_i ‖x_i − z*‖`.
    pub gap_tol: f64,
    /// Terminal KKT residual components (constrained runs).
    pub kkt_tol: f64,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        ConvergenceSpec {
            gap_tol: 1e-3,
            kkt_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub graph: GraphSpec,
    pub problem: ProblemSpec,
    pub algorithm: AlgorithmSpec,
    #[serde(default)]
    pub sim: SimSpec,
    #[serde(default)]
    pub transport: TransportSpec,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub convergence: ConvergenceSpec,
}

#[derive(Debug)]
pub enum ScenarioError {
    FileNotFound(PathBuf),
    Io(String),
    /// Every problem found in the document.
    Schema(Vec<String>),
    UnknownPreset { name: String, available: Vec<String> },
    Sim(SimError),
    Oracle(OracleError),
    Grid(String),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::FileNotFound(p) => write!(f, "scenario file not found: {}", p.display()),
            ScenarioError::Io(e) => write!(f, "{e}"),
            ScenarioError::Schema(errs) => {
                write!(f, "invalid scenario ({} problem{}):", errs.len(), if errs.len() == 1 { "" } else { "s" })?;
                for e in errs {
                    write!(f, "\n  - {e}")?;
                }
                Ok(())
            }
            ScenarioError::UnknownPreset { name, available } => write!(
                f,
                "no preset or file named '{name}'; presets: {}",
                available.join(", ")
            ),
            ScenarioError::Sim(e) => write!(f, "simulation failed: {e}"),
            ScenarioError::Oracle(e) => write!(f, "oracle failed: {e}"),
            ScenarioError::Grid(e) => write!(f, "invalid grid: {e}"),
        }
    }
}

impl std::error::Error for ScenarioError {}

impl From<SimError> for ScenarioError {
    fn from(e: SimError) -> Self {
        ScenarioError::Sim(e)
    }
}

impl From<OracleError> for ScenarioError {
    fn from(e: OracleError) -> Self {
        ScenarioError::Oracle(e)
    }
}

// ---------------------------------------------------------------------------
// schema walk

enum Shape {
    Table(&'static [(&'static str, Shape)]),
    /// Array (of arrays …) whose leaf tables follow the given shape.
    ArrayOf(&'static Shape),
    Leaf,
}

const EDGE: Shape = Shape::Table(&[("i", Shape::Leaf), ("j", Shape::Leaf), ("a", Shape::Leaf), ("b", Shape::Leaf)]);
const CONSTRAINT: Shape = Shape::Table(&[("a", Shape::Leaf), ("b", Shape::Leaf)]);
const HALFPLANE: Shape = Shape::Table(&[("normal", Shape::Leaf), ("offset", Shape::Leaf)]);
const DELAYS: Shape = Shape::Table(&[
    ("mode", Shape::Leaf),
    ("value", Shape::Leaf),
    ("pairs", Shape::Leaf),
    ("lo", Shape::Leaf),
    ("hi", Shape::Leaf),
]);

const SCHEMA: Shape = Shape::Table(&[
    ("name", Shape::Leaf),
    ("description", Shape::Leaf),
    (
        "graph",
        Shape::Table(&[
            ("kind", Shape::Leaf),
            ("n", Shape::Leaf),
            ("a", Shape::Leaf),
            ("b", Shape::Leaf),
            ("edges", Shape::ArrayOf(&EDGE)),
        ]),
    ),
    (
        "problem",
        Shape::Table(&[
            ("family", Shape::Leaf),
            ("dim", Shape::Leaf),
            ("targets", Shape::Leaf),
            ("weights", Shape::Leaf),
            ("coordinates", Shape::Leaf),
            ("constraints", Shape::ArrayOf(&Shape::ArrayOf(&CONSTRAINT))),
            ("slater_point", Shape::Leaf),
            ("segments", Shape::Leaf),
            ("halfplanes", Shape::ArrayOf(&Shape::ArrayOf(&HALFPLANE))),
            ("w", Shape::Leaf),
        ]),
    ),
    ("algorithm", Shape::Table(&[("kind", Shape::Leaf), ("alpha", Shape::Leaf)])),
    (
        "sim",
        Shape::Table(&[
            ("h", Shape::Leaf),
            ("t_end", Shape::Leaf),
            ("seed", Shape::Leaf),
            ("record_stride", Shape::Leaf),
            ("q_mineig_floor", Shape::Leaf),
            ("blowup_threshold", Shape::Leaf),
        ]),
    ),
    (
        "transport",
        Shape::Table(&[("mode", Shape::Leaf), ("eta", Shape::Leaf), ("delays", DELAYS)]),
    ),
    ("init", Shape::Table(&[("x", Shape::Leaf), ("xi", Shape::Leaf), ("rho", Shape::Leaf)])),
    (
        "output",
        Shape::Table(&[("dir", Shape::Leaf), ("record_links", Shape::Leaf), ("monitors", Shape::Leaf)]),
    ),
    (
        "convergence",
        Shape::Table(&[("gap_tol", Shape::Leaf), ("kkt_tol", Shape::Leaf)]),
    ),
]);

fn walk(value: &Value, shape: &Shape, path: &str, errors: &mut Vec<String>) {
    match (shape, value) {
        (Shape::Table(keys), Value::Table(t)) => {
            for (k, v) in t {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match keys.iter().find(|(name, _)| name == k) {
                    Some((_, sub)) => walk(v, sub, &p, errors),
                    None => {
                        let known: Vec<&str> = keys.iter().map(|(n, _)| *n).collect();
                        errors.push(format!("unknown key '{p}' (expected one of: {})", known.join(", ")));
                    }
                }
            }
        }
        (Shape::ArrayOf(inner), Value::Array(items)) => {
            for (k, v) in items.iter().enumerate() {
                walk(v, inner, &format!("{path}[{}]", k + 1), errors);
            }
        }
        // type mismatches are reported by the typed pass
        _ => {}
    }
}

fn section<T: serde::de::DeserializeOwned + Default>(
    table: &toml::Table,
    key: &str,
    required: bool,
    errors: &mut Vec<String>,
) -> Option<T> {
    match table.get(key) {
        None if required => {
            errors.push(format!("missing section [{key}]"));
            None
        }
        None => Some(T::default()),
        Some(v) => match v.clone().try_into::<T>() {
            Ok(t) => Some(t),
            Err(e) => {
                errors.push(format!("[{key}]: {}", e.message().trim()));
                None
            }
        },
    }
}

// Required sections have no meaningful default; this wrapper lets
// `section` treat them uniformly.
#[derive(Deserialize)]
#[serde(transparent)]
struct Req<T>(T);

impl<T> Default for Req<T> {
    fn default() -> Self {
        unreachable!("required sections are never defaulted")
    }
}

impl Scenario {
    /// Parses and fully validates a TOML scenario.
    pub fn from_toml_str(src: &str) -> Result<Scenario, ScenarioError> {
        let table: toml::Table = src
            .parse()
            .map_err(|e: toml::de::Error| ScenarioError::Schema(vec![e.to_string().trim().to_string()]))?;
        let mut errors = Vec::new();
        walk(&Value::Table(table.clone()), &SCHEMA, "", &mut errors);
        let name = match table.get("name") {
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                errors.push("name must be a string".into());
                None
            }
            None => {
                errors.push("missing key 'name'".into());
                None
            }
        };
        let description = match table.get("description") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => {
                errors.push("description must be a string".into());
                String::new()
            }
            None => String::new(),
        };
        let graph = section::<Req<GraphSpec>>(&table, "graph", true, &mut errors);
        let problem = section::<Req<ProblemSpec>>(&table, "problem", true, &mut errors);
        let algorithm = section::<Req<AlgorithmSpec>>(&table, "algorithm", true, &mut errors);
        let sim = section::<SimSpec>(&table, "sim", false, &mut errors);
        let transport = section::<TransportSpec>(&table, "transport", false, &mut errors);
        let init = section::<InitSpec>(&table, "init", false, &mut errors);
        let output = section::<OutputSpec>(&table, "output", false, &mut errors);
        let convergence = section::<ConvergenceSpec>(&table, "convergence", false, &mut errors);
        match (name, graph, problem, algorithm, sim, transport, init, output, convergence) {
            (Some(name), Some(graph), Some(problem), Some(algorithm), Some(sim), Some(transport), Some(init), Some(output), Some(convergence))
                if errors.is_empty() =>
            {
                let s = Scenario {
                    name,
                    description,
                    graph: graph.0,
                    problem: problem.0,
                    algorithm: algorithm.0,
                    sim,
                    transport,
                    init,
                    output,
                    convergence,
                };
                s.validate()?;
                Ok(s)
            }
            (_, graph, problem, algorithm, sim, transport, init, output, convergence) => {
                // still report semantic problems of the sections that did parse
                if let (Some(graph), Some(problem), Some(algorithm), Some(sim), Some(transport), Some(init), Some(output), Some(convergence)) =
                    (graph, problem, algorithm, sim, transport, init, output, convergence)
                {
                    let s = Scenario {
                        name: "unnamed".into(),
                        description,
                        graph: graph.0,
                        problem: problem.0,
                        algorithm: algorithm.0,
                        sim,
                        transport,
                        init,
                        output,
                        convergence,
                    };
                    if let Err(ScenarioError::Schema(more)) = s.validate() {
                        errors.extend(more);
                    }
                }
                Err(ScenarioError::Schema(errors))
            }
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenarios always serialize")
    }

    /// Semantic checks, all reported together.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.build().map(|_| ())
    }

    /// Builds graph, problem, simulation config and initial state.
    pub fn build(&self) -> Result<Built, ScenarioError> {
        let mut errors = Vec::new();
        if self.name.trim().is_empty() {
            errors.push("name must not be empty".into());
        }
        let graph = self.build_graph(&mut errors);
        let problem = self.build_problem(&mut errors);
        let algorithm = match Algorithm::from_tag(&self.algorithm.kind) {
            Some(a) => Some(a),
            None => {
                let valid: Vec<&str> = Algorithm::ALL.iter().map(|a| a.tag()).collect();
                errors.push(format!(
                    "unknown algorithm '{}' (valid: {})",
                    self.algorithm.kind,
                    valid.join(", ")
                ));
                None
            }
        };
        if !(self.algorithm.alpha > 0.0 && self.algorithm.alpha.is_finite()) {
            errors.push(format!("algorithm.alpha must be positive, got {}", self.algorithm.alpha));
        }
        if !TRANSPORT_MODES.contains(&self.transport.mode.as_str()) {
            errors.push(format!(
                "unknown transport mode '{}' (valid: {})",
                self.transport.mode,
                TRANSPORT_MODES.join(", ")
            ));
        }
        if let (Some(p), Some(a)) = (&problem, algorithm) {
            if p.is_constrained() && a != Algorithm::Constrained {
                errors.push(format!(
                    "problem family '{}' has constraints; use algorithm 'constrained'",
                    self.problem.family
                ));
            }
        }
        if let (Some(g), Some(p)) = (&graph, &problem) {
            if g.n() != p.n() {
                errors.push(format!("graph has {} agents but the problem has {}", g.n(), p.n()));
            }
        }
        let cfg = SimConfig {
            h: self.sim.h,
            t_end: self.sim.t_end,
            alpha: self.algorithm.alpha,
            eta: self.transport.eta,
            algorithm: algorithm.unwrap_or(Algorithm::PiConsensus),
            scattering_enabled: self.transport.mode == "scattering",
            naive_delay_enabled: self.transport.mode == "naive-delay",
            delays: self.transport.delays.clone(),
            seed: self.sim.seed,
            q_mineig_floor: self.sim.q_mineig_floor,
            record_stride: self.sim.record_stride,
            record_links: self.output.record_links,
            blowup_threshold: self.sim.blowup_threshold,
            corrupt_decode: false,
        };
        if let Err(SimError::InvalidConfig(list)) = cfg.validate() {
            errors.extend(list.into_iter().map(|e| format!("sim: {e}")));
        }
        if let Some(g) = &graph {
            if let Err(SimError::InvalidConfig(list)) = cfg.resolve_delays(g) {
                errors.extend(list.into_iter().map(|e| format!("transport.delays: {e}")));
            }
        }
        if !(self.convergence.gap_tol > 0.0) || !(self.convergence.kkt_tol > 0.0) {
            errors.push("convergence tolerances must be positive".into());
        }
        let init = problem.as_ref().and_then(|p| self.build_init(p, &mut errors));
        if !errors.is_empty() {
            return Err(ScenarioError::Schema(errors));
        }
        Ok(Built {
            graph: graph.expect("no errors"),
            problem: problem.expect("no errors"),
            config: cfg,
            init: init.expect("no errors"),
        })
    }

    fn build_graph(&self, errors: &mut Vec<String>) -> Option<NetworkGraph> {
        let g = &self.graph;
        let uniform = |errors: &mut Vec<String>| -> Option<(f64, f64)> {
            match (g.a, g.b) {
                (Some(a), Some(b)) => Some((a, b)),
                _ => {
                    errors.push(format!("graph kind '{}' needs uniform weights a and b", g.kind));
                    None
                }
            }
        };
        let built = match g.kind.as_str() {
            "ring" => uniform(errors).map(|(a, b)| NetworkGraph::ring(g.n, a, b)),
            "path" => uniform(errors).map(|(a, b)| NetworkGraph::path(g.n, a, b)),
            "complete" => uniform(errors).map(|(a, b)| NetworkGraph::complete(g.n, a, b)),
            "edges" => match &g.edges {
                None => {
                    errors.push("graph kind 'edges' needs an edges list".into());
                    None
                }
                Some(edges) => {
                    let mut list = Vec::new();
                    for (k, e) in edges.iter().enumerate() {
                        if e.i == 0 || e.j == 0 || e.i > g.n || e.j > g.n {
                            errors.push(format!(
                                "graph.edges[{}]: agent ids are 1-based and at most n = {}",
                                k + 1,
                                g.n
                            ));
                        } else {
                            list.push((e.i - 1, e.j - 1, e.a, e.b));
                        }
                    }
                    Some(NetworkGraph::new(g.n, &list))
                }
            },
            other => {
                errors.push(format!(
                    "unknown graph kind '{other}' (valid: {})",
                    GRAPH_KINDS.join(", ")
                ));
                None
            }
        }?;
        match built {
            Ok(g) => Some(g),
            Err(e) => {
                errors.push(format!("graph: {e}"));
                None
            }
        }
    }

    fn build_problem(&self, errors: &mut Vec<String>) -> Option<ProblemInstance> {
        let ps = &self.problem;
        let need = |field: &str, errors: &mut Vec<String>| {
            errors.push(format!("problem family '{}' needs '{field}'", ps.family));
        };
        let weights = || -> Option<Vec<DMatrix<f64>>> {
            ps.weights.as_ref().map(|ws| {
                ws.iter()
                    .map(|rows| {
                        let r = rows.len();
                        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                        if r == 0 || flat.len() != r * r {
                            DMatrix::from_element(1, 1, f64::NAN)
                        } else {
                            DMatrix::from_row_slice(r, r, &flat)
                        }
                    })
                    .collect()
            })
        };
        let result = match ps.family.as_str() {
            "quadratic" | "constrained-quadratic" => {
                let (Some(dim), Some(targets)) = (ps.dim, ps.targets.clone()) else {
                    need("dim and targets", errors);
                    return None;
                };
                if targets.iter().any(|t| t.len() != dim) {
                    errors.push(format!("problem.targets: every target needs {dim} entries"));
                    return None;
                }
                if ps.family == "quadratic" {
                    quadratic_problem(dim, targets, weights())
                } else {
                    let (Some(cons), Some(slater)) = (&ps.constraints, &ps.slater_point) else {
                        need("constraints and slater_point", errors);
                        return None;
                    };
                    let cons = cons
                        .iter()
                        .map(|list| {
                            list.iter()
                                .map(|c| LinearConstraint { a: c.a.clone(), b: c.b })
                                .collect()
                        })
                        .collect();
                    constrained_quadratic_problem(dim, targets, weights(), cons, slater.clone())
                }
            }
            "partial-quadratic" => {
                let (Some(dim), Some(coords), Some(targets)) = (ps.dim, &ps.coordinates, &ps.targets) else {
                    need("dim, coordinates and targets", errors);
                    return None;
                };
                if coords.iter().any(|&c| c == 0) {
                    errors.push("problem.coordinates are 1-based".into());
                    return None;
                }
                if targets.iter().any(|t| t.len() != 1) {
                    errors.push("problem.targets: partial-quadratic targets are one-element lists".into());
                    return None;
                }
                partial_quadratic_problem(
                    dim,
                    coords.iter().map(|c| c - 1).collect(),
                    targets.iter().map(|t| t[0]).collect(),
                )
            }
            "localization2d" => {
                let (Some(segs), Some(hps)) = (&ps.segments, &ps.halfplanes) else {
                    need("segments and halfplanes", errors);
                    return None;
                };
                let segments = segs.iter().map(|s| Segment { start: s[0], end: s[1] }).collect();
                let halfplanes = hps
                    .iter()
                    .map(|l| {
                        l.iter()
                            .map(|h| Halfplane {
                                normal: h.normal,
                                offset: h.offset,
                            })
                            .collect()
                    })
                    .collect();
                let p = localization2d_problem(segments, halfplanes, ps.w.unwrap_or(1.0));
                match (p, &ps.slater_point) {
                    (Ok(p), Some(s)) => p.with_slater_point(s.clone()),
                    (Ok(_), None) => {
                        need("slater_point", errors);
                        return None;
                    }
                    (Err(e), _) => Err(e),
                }
            }
            other => {
                errors.push(format!(
                    "unknown problem family '{other}' (valid: {})",
                    PROBLEM_FAMILIES.join(", ")
                ));
                return None;
            }
        };
        match result {
            Ok(p) => Some(p),
            Err(e) => {
                errors.push(format!("problem: {e}"));
                None
            }
        }
    }

    fn build_init(&self, p: &ProblemInstance, errors: &mut Vec<String>) -> Option<SwarmState> {
        let nd = p.n() * p.dim();
        let m = p.total_constraints();
        let mut ok = true;
        let mut check = |name: &str, v: &Option<Vec<f64>>, len: usize| {
            if let Some(v) = v {
                if v.len() != len {
                    errors.push(format!("init.{name} needs {len} entries, got {}", v.len()));
                    ok = false;
                }
            }
        };
        check("x", &self.init.x, nd);
        check("xi", &self.init.xi, nd);
        check("rho", &self.init.rho, m);
        if let Some(rho) = &self.init.rho {
            if rho.iter().any(|r| *r < 0.0) {
                errors.push("init.rho must be nonnegative".into());
                ok = false;
            }
        }
        if !ok {
            return None;
        }
        let random = simulator::initial_state(p, self.sim.seed);
        let x = self.init.x.clone().unwrap_or_else(|| random.stacked_x());
        let xi = self.init.xi.clone().unwrap_or_else(|| vec![0.0; nd]);
        let rho = self.init.rho.clone().unwrap_or_else(|| vec![0.0; m]);
        Some(SwarmState::from_stacked(p, &x, &xi, &rho))
    }
}

/// A scenario turned into library objects.
#[derive(Debug, Clone)]
pub struct Built {
    pub graph: NetworkGraph,
    pub problem: ProblemInstance,
    pub config: SimConfig,
    pub init: SwarmState,
}

/// Reads and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let src = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ScenarioError::FileNotFound(path.to_path_buf()),
        _ => ScenarioError::Io(format!("{}: {e}", path.display())),
    })?;
    Scenario::from_toml_str(&src)
}

/// A bundled preset by name, or else a scenario file at that path.
pub fn load(name_or_path: &str) -> Result<Scenario, ScenarioError> {
    if let Some(s) = presets::get(name_or_path) {
        return Ok(s);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        return parse_scenario(path);
    }
    if name_or_path.ends_with(".toml") || name_or_path.contains('/') {
        return Err(ScenarioError::FileNotFound(path.to_path_buf()));
    }
    Err(ScenarioError::UnknownPreset {
        name: name_or_path.to_string(),
        available: presets::names().into_iter().map(String::from).collect(),
    })
}

pub mod presets {
    //! Bundled scenarios. `fig10_*`, `fig11_*` and `fig12_*` are the
    //! delay-free, naive-delay and scattering variants of the same setup.

    use super::Scenario;

    const FILES: &[(&str, &str)] = &[
        ("fig10_quadratic", include_str!("../presets/fig10_quadratic.toml")),
        ("fig11_quadratic", include_str!("../presets/fig11_quadratic.toml")),
        ("fig12_quadratic", include_str!("../presets/fig12_quadratic.toml")),
        ("fig10_localization", include_str!("../presets/fig10_localization.toml")),
        ("fig11_localization", include_str!("../presets/fig11_localization.toml")),
        ("fig12_localization", include_str!("../presets/fig12_localization.toml")),
        ("gradient_consensus", include_str!("../presets/gradient_consensus.toml")),
        ("partial_quadratic_scattering", include_str!("../presets/partial_quadratic_scattering.toml")),
        ("constrained_quadratic", include_str!("../presets/constrained_quadratic.toml")),
        ("constrained_quadratic_scattering", include_str!("../presets/constrained_quadratic_scattering.toml")),
        ("constrained_1d", include_str!("../presets/constrained_1d.toml")),
        ("constrained_2d", include_str!("../presets/constrained_2d.toml")),
    ];

    /// Short names for the three quadratic variants.
    pub const ALIASES: &[(&str, &str)] = &[
        ("fig10_delayfree", "fig10_quadratic"),
        ("fig11_naive_delay", "fig11_quadratic"),
        ("fig12_scattering", "fig12_quadratic"),
    ];

    /// All preset names, aliases last.
    pub fn names() -> Vec<&'static str> {
        FILES.iter().map(|(n, _)| *n).chain(ALIASES.iter().map(|(a, _)| *a)).collect()
    }

    /// Raw TOML of a preset (aliases resolve to their target).
    pub fn source(name: &str) -> Option<&'static str> {
        let target = ALIASES.iter().find(|(a, _)| *a == name).map_or(name, |(_, t)| *t);
        FILES.iter().find(|(n, _)| *n == target).map(|(_, s)| *s)
    }

    /// Parsed preset. An alias keeps the alias as its name.
    pub fn get(name: &str) -> Option<Scenario> {
        let mut s = Scenario::from_toml_str(source(name)?).expect("bundled presets are valid");
        s.name = name.to_string();
        Some(s)
    }

    /// `(name, description)` pairs for listing.
    pub fn list() -> Vec<(&'static str, String)> {
        names()
            .into_iter()
            .map(|n| {
                let d = match ALIASES.iter().find(|(a, _)| *a == n) {
                    Some((_, t)) => format!("alias of {t}"),
                    None => get(n).map(|s| s.description).unwrap_or_default(),
                };
                (n, d)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// runs

/// Command-line style overrides and output settings for [`run_scenario`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub h: Option<f64>,
    pub quiet: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortMargin {
    pub link: String,
    pub margin: f64,
}

/// JSON run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub exit_code: i32,
    pub converged: bool,
    pub diverged: bool,
    pub divergence_time: Option<f64>,
    pub terminal: TerminalMetrics,
    /// Largest `g_il(x_i)` over all agents at the final sample.
    pub max_terminal_constraint: Option<f64>,
    /// Smallest domain margin (e.g. shape eigenvalue) seen at any step.
    pub min_domain_margin: Option<f64>,
    pub rho_nonnegative: bool,
    pub oracle: OracleSolution,
    pub dissipation_passed: bool,
    pub dissipation: Vec<DissipationCheck>,
    pub port_passivity: Vec<PortMargin>,
    pub meta: RunMetadata,
    pub runtime_seconds: f64,
    pub artifacts: Vec<String>,
    pub config: Scenario,
}

/// Everything a run produced, including the in-memory telemetry.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub telemetry: Telemetry,
    pub channels: Vec<(String, Vec<f64>)>,
}

impl Scenario {
    /// Applies CLI overrides.
    pub fn with_overrides(&self, seed: Option<u64>, h: Option<f64>) -> Scenario {
        let mut s = self.clone();
        if let Some(seed) = seed {
            s.sim.seed = seed;
        }
        if let Some(h) = h {
            s.sim.h = h;
        }
        s
    }
}

/// Oracle matching the scenario's algorithm.
pub fn scenario_oracle(built: &Built) -> Result<OracleSolution, ScenarioError> {
    Ok(oracle::solve(&built.problem, &built.graph, built.config.alpha)?)
}

/// Runs a scenario: simulation, oracle, monitors, and (with `out_dir`) CSV
/// telemetry plus a JSON summary on disk.
pub fn run_scenario(s: &Scenario, opts: &RunOptions) -> Result<RunOutcome, ScenarioError> {
    let s = s.with_overrides(opts.seed, opts.h);
    let built = s.build()?;
    let started = Instant::now();
    let sol = scenario_oracle(&built)?;
    let p = &built.problem;
    let g = &built.graph;

    let mut monitor: Option<OnlineMonitor> = None;
    let mut min_margin: Option<f64> = None;
    let mut rho_ok = true;
    let stride = built.config.record_stride;
    let use_monitors = s.output.monitors;
    let mut observer = |tel: &Telemetry, sample: &Sample| {
        if use_monitors {
            monitor
                .get_or_insert_with(|| OnlineMonitor::new(MonitorContext::new(p, g, tel, &sol), stride))
                .observe(sample);
        }
        for i in 0..p.n() {
            if let Some(m) = p.agent(i).domain_margin(tel.agent_x(sample, i)) {
                min_margin = Some(min_margin.map_or(m, |v: f64| v.min(m)));
            }
        }
        if sample.rho.iter().any(|r| *r < 0.0) {
            rho_ok = false;
        }
    };
    let tel = simulator::run_observed(p, g, &built.config, &built.init, Some(&mut observer))?;

    let series = monitors::convergence_metrics(&tel, p, &sol);
    let terminal = series.terminal();
    let last = tel.last();
    let max_constraint = if p.is_constrained() {
        Some(
            (0..p.n())
                .flat_map(|i| p.agent(i).constraints(tel.agent_x(last, i)))
                .fold(f64::NEG_INFINITY, f64::max),
        )
    } else {
        None
    };
    let constrained = built.config.algorithm == Algorithm::Constrained && p.is_constrained();
    let converged = !tel.meta.diverged
        && terminal.optimality_gap <= s.convergence.gap_tol
        && (!constrained || terminal.kkt.max_component() <= s.convergence.kkt_tol);
    let exit_code = if tel.meta.diverged {
        EXIT_DIVERGED
    } else if converged {
        EXIT_CONVERGED
    } else {
        EXIT_NOT_CONVERGED
    };

    let (dissipation, port, mut channels) = match &monitor {
        Some(m) => {
            let ports = m
                .port_passivity_margins()
                .into_iter()
                .map(|(link, margin)| PortMargin { link, margin })
                .collect();
            (m.checks(), ports, m.channels_for(&tel))
        }
        None => (Vec::new(), Vec::new(), Vec::new()),
    };
    channels.push(("consensus_error".into(), series.consensus_error.clone()));
    channels.push(("optimality_gap".into(), series.optimality_gap.clone()));
    if constrained {
        channels.push(("kkt_stationarity".into(), series.kkt.iter().map(|k| k.stationarity).collect()));
        channels.push(("kkt_primal".into(), series.kkt.iter().map(|k| k.primal_violation).collect()));
        channels.push(("kkt_dual".into(), series.kkt.iter().map(|k| k.dual_negativity).collect()));
        channels.push(("kkt_complementarity".into(), series.kkt.iter().map(|k| k.complementarity).collect()));
    }

    let mut summary = RunSummary {
        scenario: s.name.clone(),
        exit_code,
        converged,
        diverged: tel.meta.diverged,
        divergence_time: tel.meta.divergence_time,
        terminal,
        max_terminal_constraint: max_constraint,
        min_domain_margin: min_margin,
        rho_nonnegative: rho_ok,
        oracle: sol,
        dissipation_passed: dissipation.iter().all(|c| c.passed),
        dissipation,
        port_passivity: port,
        meta: tel.meta.clone(),
        runtime_seconds: started.elapsed().as_secs_f64(),
        artifacts: Vec::new(),
        config: s.clone(),
    };
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| s.output.dir.as_ref().map(PathBuf::from));
    if let Some(dir) = out_dir {
        write_artifacts(&dir, &tel, &channels, &mut summary)?;
    }
    Ok(RunOutcome {
        summary,
        telemetry: tel,
        channels,
    })
}

fn write_artifacts(
    dir: &Path,
    tel: &Telemetry,
    channels: &[(String, Vec<f64>)],
    summary: &mut RunSummary,
) -> Result<(), ScenarioError> {
    let io = |e: std::io::Error| ScenarioError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let csv = dir.join("telemetry.csv");
    let refs: Vec<(&str, &[f64])> = channels.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect();
    tel.write_csv(&csv, &refs).map_err(io)?;
    let json = dir.join("summary.json");
    summary.artifacts = vec![csv.display().to_string(), json.display().to_string()];
    let text = serde_json::to_string_pretty(summary).map_err(|e| ScenarioError::Io(e.to_string()))?;
    std::fs::write(&json, text).map_err(io)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sweeps

/// Keys a grid may vary.
pub const GRID_KEYS: [&str; 8] = ["alpha", "eta", "h", "t_end", "delay", "delay_lo", "delay_hi", "seed"];

/// Cartesian parameter grid, e.g. `eta=0.5,1,2;seed=0..9`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Grid {
    pub axes: Vec<(String, Vec<f64>)>,
}

impl Grid {
    /// Axes separated by `;`, values by `,`; `a..b` is an inclusive integer range.
    pub fn parse(spec: &str) -> Result<Grid, ScenarioError> {
        let mut axes = Vec::new();
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, values) = part
                .split_once('=')
                .ok_or_else(|| ScenarioError::Grid(format!("'{part}' is not key=values")))?;
            let key = key.trim();
            if !GRID_KEYS.contains(&key) {
                return Err(ScenarioError::Grid(format!(
                    "unknown key '{key}' (valid: {})",
                    GRID_KEYS.join(", ")
                )));
            }
            let mut vals = Vec::new();
            for v in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                if let Some((lo, hi)) = v.split_once("..") {
                    let lo: i64 = lo.trim().parse().map_err(|_| ScenarioError::Grid(format!("bad range '{v}'")))?;
                    let hi: i64 = hi.trim().parse().map_err(|_| ScenarioError::Grid(format!("bad range '{v}'")))?;
                    if hi < lo {
                        return Err(ScenarioError::Grid(format!("empty range '{v}'")));
                    }
                    vals.extend((lo..=hi).map(|k| k as f64));
                } else {
                    vals.push(v.parse().map_err(|_| ScenarioError::Grid(format!("bad number '{v}'")))?);
                }
            }
            if vals.is_empty() {
                return Err(ScenarioError::Grid(format!("no values for '{key}'")));
            }
            axes.push((key.to_string(), vals));
        }
        Ok(Grid { axes })
    }

    /// All cells in row-major order; an empty grid has exactly one (empty) cell.
    pub fn cells(&self) -> Vec<Vec<(String, f64)>> {
        let mut cells = vec![Vec::new()];
        for (key, vals) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    vals.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((key.clone(), *v));
                        c
                    })
                })
                .collect();
        }
        cells
    }
}

fn apply_cell(base: &Scenario, cell: &[(String, f64)]) -> Result<Scenario, ScenarioError> {
    let mut s = base.clone();
    for (k, v) in cell {
        match k.as_str() {
            "alpha" => s.algorithm.alpha = *v,
            "eta" => s.transport.eta = *v,
            "h" => s.sim.h = *v,
            "t_end" => s.sim.t_end = *v,
            "seed" => {
                if *v < 0.0 || v.fract() != 0.0 {
                    return Err(ScenarioError::Grid(format!("seed must be a nonnegative integer, got {v}")));
                }
                s.sim.seed = *v as u64
            }
            "delay" => s.transport.delays = DelaySpec::Uniform { value: *v },
            "delay_lo" | "delay_hi" => {
                let (mut lo, mut hi) = match s.transport.delays {
                    DelaySpec::Random { lo, hi } => (lo, hi),
                    _ => (0.0, 1.0),
                };
                if k == "delay_lo" {
                    lo = *v;
                } else {
                    hi = *v;
                }
                s.transport.delays = DelaySpec::Random { lo, hi };
            }
            other => return Err(ScenarioError::Grid(format!("unknown key '{other}'"))),
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub params: BTreeMap<String, f64>,
    pub exit_code: i32,
    pub converged: bool,
    pub diverged: bool,
    pub optimality_gap: f64,
    pub dissipation_passed: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scenario: String,
    pub rows: Vec<SweepRow>,
    pub converged: usize,
    pub diverged: usize,
    pub failed: usize,
}

impl SweepReport {
    pub fn table(&self) -> String {
        let keys: Vec<String> = self.rows.first().map(|r| r.params.keys().cloned().collect()).unwrap_or_default();
        let mut out = String::from("cell");
        for k in &keys {
            out.push_str(&format!("\t{k}"));
        }
        out.push_str("\texit\tconverged\tdiverged\tgap\tdissipation\n");
        for r in &self.rows {
            out.push_str(&format!("{}", r.cell));
            for k in &keys {
                out.push_str(&format!("\t{}", r.params[k]));
            }
            out.push_str(&format!(
                "\t{}\t{}\t{}\t{:.3e}\t{}",
                r.exit_code,
                r.converged,
                r.diverged,
                r.optimality_gap,
                if r.dissipation_passed { "pass" } else { "fail" }
            ));
            if let Some(e) = &r.error {
                out.push_str(&format!("\t{e}"));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "{} cells: {} converged, {} diverged, {} failed\n",
            self.rows.len(),
            self.converged,
            self.diverged,
            self.failed
        ));
        out
    }
}

/// Runs every grid cell in parallel. Cells keep the base seed unless the
/// grid varies `seed`, so results do not depend on scheduling. With an
/// output directory each cell writes to `cell_NNN/` below it.
pub fn sweep(base: &Scenario, grid: &Grid, opts: &RunOptions) -> Result<SweepReport, ScenarioError> {
    let base = base.with_overrides(opts.seed, opts.h);
    let cells = grid.cells();
    let scenarios: Vec<Scenario> = cells
        .iter()
        .map(|c| apply_cell(&base, c))
        .collect::<Result<_, _>>()?;
    let rows: Vec<SweepRow> = scenarios
        .par_iter()
        .zip(cells.par_iter())
        .enumerate()
        .map(|(k, (s, cell))| {
            let cell_opts = RunOptions {
                out_dir: opts.out_dir.as_ref().map(|d| d.join(format!("cell_{k:03}"))),
                seed: None,
                h: None,
                quiet: true,
            };
            let params = cell.iter().cloned().collect();
            match run_scenario(s, &cell_opts) {
                Ok(out) => SweepRow {
                    cell: k,
                    params,
                    exit_code: out.summary.exit_code,
                    converged: out.summary.converged,
                    diverged: out.summary.diverged,
                    optimality_gap: out.summary.terminal.optimality_gap,
                    dissipation_passed: out.summary.dissipation_passed,
                    error: None,
                },
                Err(e) => SweepRow {
                    cell: k,
                    params,
                    exit_code: EXIT_ERROR,
                    converged: false,
                    diverged: false,
                    optimality_gap: f64::NAN,
                    dissipation_passed: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let report = SweepReport {
        scenario: base.name.clone(),
        converged: rows.iter().filter(|r| r.converged).count(),
        diverged: rows.iter().filter(|r| r.diverged).count(),
        failed: rows.iter().filter(|r| r.error.is_some()).count(),
        rows,
    };
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| ScenarioError::Io(e.to_string()))?;
        let text = serde_json::to_string_pretty(&report).map_err(|e| ScenarioError::Io(e.to_string()))?;
        std::fs::write(dir.join("sweep.json"), text).map_err(|e| ScenarioError::Io(e.to_string()))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"
name = "tiny"

[graph]
kind = "path"
n = 2
a = 1.0
b = 1.0

[problem]
family = "quadratic"
dim = 1
targets = [[0.0], [2.0]]

[algorithm]
kind = "pi-consensus"
alpha = 1.0

[sim]
h = 0.001
t_end = 1.0
"#;

    #[test]
    fn fig10_preset_echoes_experiment_parameters() {
        let s = presets::get("fig10_quadratic").unwrap();
        assert_eq!(s.algorithm.alpha, 2.0);
        assert_eq!((s.graph.kind.as_str(), s.graph.n), ("ring", 5));
        assert_eq!((s.graph.a, s.graph.b), (Some(1.0), Some(3.0)));
    }

    #[test]
    fn every_preset_parses_and_builds() {
        for name in presets::names() {
            let s = presets::get(name).unwrap_or_else(|| panic!("{name}"));
            s.build().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn nonpositive_step_is_a_schema_error() {
        let src = TINY.replace("h = 0.001", "h = 0.0");
        match Scenario::from_toml_str(&src) {
            Err(ScenarioError::Schema(errs)) => assert!(errs.iter().any(|e| e.contains("h must be positive")), "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_algorithm_lists_valid_tags() {
        let src = TINY.replace("pi-consensus", "newton");
        let err = Scenario::from_toml_str(&src).unwrap_err().to_string();
        for tag in ["gradient-consensus", "pi-consensus", "constrained"] {
            assert!(err.contains(tag), "{err}");
        }
    }

    #[test]
    fn errors_are_aggregated_across_sections() {
        let src = TINY
            .replace("h = 0.001", "h = -1.0\nstep = 3")
            .replace("alpha = 1.0", "alpha = 0.0")
            .replace("kind = \"path\"", "kind = \"star\"");
        match Scenario::from_toml_str(&src) {
            Err(ScenarioError::Schema(errs)) => {
                assert!(errs.iter().any(|e| e.contains("sim.step")), "{errs:?}");
                assert!(errs.iter().any(|e| e.contains("star")), "{errs:?}");
                assert!(errs.iter().any(|e| e.contains("alpha")), "{errs:?}");
                assert!(errs.iter().any(|e| e.contains("h must be positive")), "{errs:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_file_is_reported_as_such() {
        let err = parse_scenario(Path::new("/nonexistent/scenario.toml")).unwrap_err();
        assert!(matches!(err, ScenarioError::FileNotFound(_)));
    }

    #[test]
    fn grid_cells_and_empty_grid() {
        let g = Grid::parse("eta=0.5,1,2; seed=0..1").unwrap();
        assert_eq!(g.cells().len(), 6);
        assert_eq!(Grid::parse("").unwrap().cells(), vec![Vec::<(String, f64)>::new()]);
        assert!(Grid::parse("gamma=1").is_err());
    }

    #[test]
    fn tiny_scenario_runs_to_an_exit_code() {
        let s = Scenario::from_toml_str(TINY).unwrap();
        let out = run_scenario(&s, &RunOptions::default()).unwrap();
        assert!(!out.summary.diverged);
        assert!(out.summary.dissipation_passed, "{:?}", out.summary.dissipation);
        assert_eq!(out.summary.exit_code, EXIT_NOT_CONVERGED);
    }
}
