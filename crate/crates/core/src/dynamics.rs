//! Right-hand sides of the continuous-time algorithms.
//!
//! Stacked forms take the whole swarm at once and use the graph Laplacians
//! directly; the per-agent delayed form replaces neighbor states by whatever
//! the agent actually received (`r_ij`), which is how delays and the
//! scattering channel enter.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::{LaplacianKind, NetworkGraph};
use crate::problem::ProblemInstance;

/// Multipliers at or below this value count as sitting on the boundary `ρ = 0`.
pub const RHO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// `ẋ = −αφ(x) − L̄_P x`: diffusive coupling plus local gradients (biased).
    GradientConsensus,
    /// PI consensus with gradient input.
    PiConsensus,
    /// PI consensus on the Lagrangian plus projected multiplier dynamics.
    Constrained,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [
        Algorithm::GradientConsensus,
        Algorithm::PiConsensus,
        Algorithm::Constrained,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Algorithm::GradientConsensus => "gradient-consensus",
            Algorithm::PiConsensus => "pi-consensus",
            Algorithm::Constrained => "constrained",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Algorithm> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsError {
    NegativeMultiplier { value: f64 },
    MissingNeighborSignal { agent: usize, neighbor: usize },
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
}

impl fmt::Display for DynamicsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicsError::NegativeMultiplier { value } => {
                write!(f, "multiplier {value} is negative")
            }
            DynamicsError::MissingNeighborSignal { agent, neighbor } => {
                write!(f, "agent {agent} has no received signal from neighbor {neighbor}")
            }
            DynamicsError::DimensionMismatch { what, expected, got } => {
                write!(f, "{what}: expected length {expected}, got {got}")
            }
        }
    }
}

impl std::error::Error for DynamicsError {}

/// `(x_i, ξ_i, ρ_i)`: estimate, PI integrator, multiplier estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub rho: Vec<f64>,
}

impl AgentState {
    /// `[x_i; ξ_i]`.
    pub fn port(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.extend_from_slice(&self.xi);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmState {
    pub agents: Vec<AgentState>,
    pub t: f64,
}

impl SwarmState {
    /// Builds a state from stacked `x`, `ξ` and `ρ` vectors split by `p`'s dimensions.
    pub fn from_stacked(p: &ProblemInstance, x: &[f64], xi: &[f64], rho: &[f64]) -> SwarmState {
        let dim = p.dim();
        let off = p.constraint_offsets();
        let agents = (0..p.n())
            .map(|i| AgentState {
                x: x[i * dim..(i + 1) * dim].to_vec(),
                xi: xi[i * dim..(i + 1) * dim].to_vec(),
                rho: rho[off[i]..off[i + 1]].to_vec(),
            })
            .collect();
        SwarmState { agents, t: 0.0 }
    }

    pub fn stacked_x(&self) -> Vec<f64> {
        self.agents.iter().flat_map(|a| a.x.iter().copied()).collect()
    }

    pub fn stacked_xi(&self) -> Vec<f64> {
        self.agents.iter().flat_map(|a| a.xi.iter().copied()).collect()
    }

    pub fn stacked_rho(&self) -> Vec<f64> {
        self.agents.iter().flat_map(|a| a.rho.iter().copied()).collect()
    }

    /// Checks dimensions against the problem and `ρ ≥ 0`.
    pub fn validate(&self, p: &ProblemInstance) -> Result<(), DynamicsError> {
        if self.agents.len() != p.n() {
            return Err(DynamicsError::DimensionMismatch {
                what: "agents",
                expected: p.n(),
                got: self.agents.len(),
            });
        }
        for (i, a) in self.agents.iter().enumerate() {
            for (what, len, expected) in [
                ("x", a.x.len(), p.dim()),
                ("xi", a.xi.len(), p.dim()),
                ("rho", a.rho.len(), p.agent(i).constraint_count()),
            ] {
                if len != expected {
                    return Err(DynamicsError::DimensionMismatch { what, expected, got: len });
                }
            }
            if let Some(&value) = a.rho.iter().find(|&&r| r < -RHO_TOL) {
                return Err(DynamicsError::NegativeMultiplier { value });
            }
        }
        Ok(())
    }

    /// Largest Euclidean norm over all agents' `(x, ξ, ρ)`.
    pub fn max_norm(&self) -> f64 {
        self.agents
            .iter()
            .map(|a| {
                (a.x.iter().chain(&a.xi).chain(&a.rho).map(|v| v * v).sum::<f64>()).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Time derivative of one agent's state.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentDerivative {
    pub dx: Vec<f64>,
    pub dxi: Vec<f64>,
    pub drho: Vec<f64>,
}

/// Projected multiplier rate: `0` if `ρ = 0` and `g < 0`, otherwise `g`.
pub fn psi(rho: f64, g: f64) -> Result<f64, DynamicsError> {
    if rho < -RHO_TOL {
        return Err(DynamicsError::NegativeMultiplier { value: rho });
    }
    Ok(if rho <= RHO_TOL && g < 0.0 { 0.0 } else { g })
}

/// Elementwise [`psi`].
pub fn psi_vec(rho: &[f64], g: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    rho.iter().zip(g).map(|(&r, &gv)| psi(r, gv)).collect()
}

/// `ẋ = −αφ(x) − L̄_P x`.
pub fn consensus_gradient_rhs(p: &ProblemInstance, g: &NetworkGraph, alpha: f64, x: &[f64]) -> Vec<f64> {
    let dim = p.dim();
    let mut dx = vec![0.0; x.len()];
    g.laplacian_apply_add(LaplacianKind::P, dim, x, -1.0, &mut dx);
    for i in 0..p.n() {
        let phi = p.agent(i).gradient(&x[i * dim..(i + 1) * dim]);
        for (d, v) in dx[i * dim..(i + 1) * dim].iter_mut().zip(phi) {
            *d -= alpha * v;
        }
    }
    dx
}

// ẋ = −L̄_P x + L̄_I ξ − α(φ(x) + Γ(x)ρ), ξ̇ = −L̄_I x. With `rho = None` the Γρ term is absent.
fn pi_core(
    p: &ProblemInstance,
    g: &NetworkGraph,
    alpha: f64,
    x: &[f64],
    xi: &[f64],
    rho: Option<(&[f64], &[usize])>,
) -> (Vec<f64>, Vec<f64>) {
    let dim = p.dim();
    let mut dx = vec![0.0; x.len()];
    g.laplacian_apply_add(LaplacianKind::P, dim, x, -1.0, &mut dx);
    g.laplacian_apply_add(LaplacianKind::I, dim, xi, 1.0, &mut dx);
    for i in 0..p.n() {
        let xi_ = &x[i * dim..(i + 1) * dim];
        let mut grad = p.agent(i).gradient(xi_);
        if let Some((rho, off)) = rho {
            if off[i + 1] > off[i] {
                let gr = p.jacobian_times(i, xi_, &rho[off[i]..off[i + 1]]);
                for (a, b) in grad.iter_mut().zip(gr) {
                    *a += b;
                }
            }
        }
        for (d, v) in dx[i * dim..(i + 1) * dim].iter_mut().zip(grad) {
            *d -= alpha * v;
        }
    }
    let mut dxi = vec![0.0; xi.len()];
    g.laplacian_apply_add(LaplacianKind::I, dim, x, -1.0, &mut dxi);
    (dx, dxi)
}

/// PI consensus closed loop: `ẋ = −L̄_P x + L̄_I ξ − αφ(x)`, `ξ̇ = −L̄_I x`.
pub fn pi_consensus_rhs(
    p: &ProblemInstance,
    g: &NetworkGraph,
    alpha: f64,
    x: &[f64],
    xi: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    pi_core(p, g, alpha, x, xi, None)
}

/// Stacked derivative of the full swarm state.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmDerivative {
    pub dx: Vec<f64>,
    pub dxi: Vec<f64>,
    pub drho: Vec<f64>,
}

/// Constrained primal-dual flow: the PI loop driven by `∇_z H_i = φ_i + Γ_iρ_i`,
/// plus `ρ̇ = ψ(ρ, ḡ(x))` with `ḡ(x) = [g_1(x_1); …; g_n(x_n)]`.
pub fn constrained_rhs(
    p: &ProblemInstance,
    g: &NetworkGraph,
    alpha: f64,
    x: &[f64],
    xi: &[f64],
    rho: &[f64],
) -> Result<SwarmDerivative, DynamicsError> {
    let off = p.constraint_offsets();
    if rho.len() != off[p.n()] {
        return Err(DynamicsError::DimensionMismatch {
            what: "rho",
            expected: off[p.n()],
            got: rho.len(),
        });
    }
    let (dx, dxi) = pi_core(p, g, alpha, x, xi, Some((rho, &off)));
    let dim = p.dim();
    let mut drho = Vec::with_capacity(rho.len());
    for i in 0..p.n() {
        if off[i + 1] == off[i] {
            continue;
        }
        let gi = p.agent(i).constraints(&x[i * dim..(i + 1) * dim]);
        drho.extend(psi_vec(&rho[off[i]..off[i + 1]], &gi)?);
    }
    Ok(SwarmDerivative { dx, dxi, drho })
}

/// What agent `i` holds about neighbor `j`: `r_ij = [r^x_ij; r^ξ_ij]` (length `2N`).
#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    pub neighbor: usize,
    pub r: Vec<f64>,
}

/// Controller output `v_ij = E_ij [r^x − x_i; r^ξ − ξ_i]` with
/// `E_ij = [[a I, −b I], [b I, 0]]`.
pub fn controller_output(a: f64, b: f64, x_i: &[f64], xi_i: &[f64], r: &[f64]) -> Vec<f64> {
    let n = x_i.len();
    let mut v = vec![0.0; 2 * n];
    for k in 0..n {
        let ex = r[k] - x_i[k];
        let exi = r[n + k] - xi_i[k];
        v[k] = a * ex - b * exi;
        v[n + k] = b * ex;
    }
    v
}

fn lookup<'a>(
    received: &'a [Received],
    agent: usize,
    neighbor: usize,
) -> Result<&'a Received, DynamicsError> {
    received
        .iter()
        .find(|r| r.neighbor == neighbor)
        .ok_or(DynamicsError::MissingNeighborSignal { agent, neighbor })
}

/// Per-agent delayed dynamics, driven by received signals instead of neighbor states:
///
/// `ẋ_i = Σ_j a_ij(r^x_ij − x_i) − Σ_j b_ij(r^ξ_ij − ξ_i) − α(φ_i(x_i) + Γ_i(x_i)ρ_i)`,
/// `ξ̇_i = Σ_j b_ij(r^x_ij − x_i)`, `ρ̇_i = ψ_i(ρ_i, g_i(x_i))`.
pub fn delayed_agent_rhs(
    p: &ProblemInstance,
    g: &NetworkGraph,
    alpha: f64,
    i: usize,
    state: &AgentState,
    received: &[Received],
) -> Result<AgentDerivative, DynamicsError> {
    let dim = p.dim();
    let mut v = vec![0.0; 2 * dim];
    for &(j, e) in g.neighbors(i) {
        let edge = &g.edges()[e];
        let r = lookup(received, i, j)?;
        if r.r.len() != 2 * dim {
            return Err(DynamicsError::DimensionMismatch {
                what: "received signal",
                expected: 2 * dim,
                got: r.r.len(),
            });
        }
        let vij = controller_output(edge.a, edge.b, &state.x, &state.xi, &r.r);
        for (acc, val) in v.iter_mut().zip(vij) {
            *acc += val;
        }
    }
    agent_dynamics(p, alpha, i, state, &v)
}

/// Agent block driven by the summed controller output `v_i`:
/// `[ẋ_i; ξ̇_i] = v_i − α[φ_i + Γ_iρ_i; 0]`, `ρ̇_i = ψ_i(ρ_i, g_i(x_i))`.
pub fn agent_dynamics(
    p: &ProblemInstance,
    alpha: f64,
    i: usize,
    state: &AgentState,
    v: &[f64],
) -> Result<AgentDerivative, DynamicsError> {
    let dim = p.dim();
    let agent = p.agent(i);
    let mut grad = agent.gradient(&state.x);
    if !state.rho.is_empty() {
        let gr = p.jacobian_times(i, &state.x, &state.rho);
        for (a, b) in grad.iter_mut().zip(gr) {
            *a += b;
        }
    }
    let dx = (0..dim).map(|k| v[k] - alpha * grad[k]).collect();
    let dxi = v[dim..].to_vec();
    let drho = if state.rho.is_empty() {
        Vec::new()
    } else {
        psi_vec(&state.rho, &agent.constraints(&state.x))?
    };
    Ok(AgentDerivative { dx, dxi, drho })
}

/// Delayed gradient-consensus agent: `ẋ_i = Σ_j a_ij(r^x_ij − x_i) − αφ_i(x_i)`; `ξ` is inert.
pub fn delayed_gradient_consensus_rhs(
    p: &ProblemInstance,
    g: &NetworkGraph,
    alpha: f64,
    i: usize,
    state: &AgentState,
    received: &[Received],
) -> Result<AgentDerivative, DynamicsError> {
    let dim = p.dim();
    let phi = p.agent(i).gradient(&state.x);
    let mut dx: Vec<f64> = phi.iter().map(|v| -alpha * v).collect();
    for &(j, e) in g.neighbors(i) {
        let a = g.edges()[e].a;
        let r = lookup(received, i, j)?;
        for k in 0..dim {
            dx[k] += a * (r.r[k] - state.x[k]);
        }
    }
    Ok(AgentDerivative {
        dx,
        dxi: vec![0.0; dim],
        drho: vec![0.0; state.rho.len()],
    })
}
