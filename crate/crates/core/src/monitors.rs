//! Storage functions, dissipation checks and convergence metrics along
//! simulated trajectories.
//!
//! Each storage `S` comes with a permitted supply rate `σ`. A check compares
//! the forward difference `ΔS/Δt` between consecutive samples with `σ` at
//! the left sample and reports every excess above a tolerance. The default
//! tolerance is `50·h·(1 + peak state norm)`, which covers the `O(h)`
//! Euler defect.
//!
//! | storage | value | supply |
//! |---|---|---|
//! | `S_P` | `½‖x‖²` | `xᵀu` |
//! | `S` | `½‖x‖² + ½‖ξ‖²` | `xᵀu` |
//! | `S_tilde` | `½‖x̃‖² + ½‖ξ̃‖²` | `x̃ᵀũ` |
//! | `U_i` | `½‖ρ_i − λ_i*‖²` | `ν̃_iᵀx̃_i` |
//! | `Sbar_i` | `½‖x̃_i‖² + ½‖ξ_i − ξ̂_i‖²` | `Σ_j r̄_ijᵀv̄_ij + x̃_iᵀũ_i` |
//! | `W_i` | `Sbar_i + αU_i` | `Σ_j r̄_ijᵀv̄_ij` |
//! | `V_ij` | in-flight wave energy | `−v̄_ijᵀr̄_ij − v̄_jiᵀr̄_ji` |
//! | `W` | total | `0` |
//!
//! Here `u = −α(φ + Γρ)`, tildes subtract the equilibrium, and
//! `ν̃_i = Γ_i(x_i)ρ_i − Γ_i(z*)λ_i*`.
//!
//! Over the scattering channel each link behaves, at equilibrium, like an
//! ideal link of half the gain. The integrator equilibrium is then
//! `ξ̂ = 2ξ*` and the port equilibrium is `r*_ij = [z*; ξ_i* + ξ_j*]`,
//! `v*_ij = [b_ij(ξ_i* − ξ_j*); 0]`. Bars denote deviations from these
//! values.
//!
//! Without scattering, `W = S_tilde + αΣU_i`. With it,
//! `W = Σ W_i + Σ V_ij`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::Algorithm;
use crate::graph::{LaplacianKind, NetworkGraph};
use crate::linalg::{dot, norm, norm_sq};
use crate::oracle::OracleSolution;
use crate::problem::{kkt_residual, KktResidual, ProblemInstance};
use crate::scattering::{self, ScatteringLink};
use crate::simulator::{LinkRecord, Sample, Telemetry, Transport};

/// Storages are nonnegative by construction; this is the roundoff allowance.
pub const NONNEGATIVITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StorageKind {
    SP,
    S,
    STilde,
    SBar(usize),
    U(usize),
    WAgent(usize),
    /// Indexed by position in the graph's edge list.
    V(usize),
    W,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MonitorError {
    MissingOracle,
    MissingLinkRecords,
    NotApplicable(StorageKind),
}

impl fmt::Display for MonitorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonitorError::MissingOracle => write!(f, "storage needs an oracle solution"),
            MonitorError::MissingLinkRecords => {
                write!(f, "storage needs per-link records (enable record_links)")
            }
            MonitorError::NotApplicable(k) => write!(f, "storage {k:?} does not apply to this run"),
        }
    }
}

impl std::error::Error for MonitorError {}

#[derive(Debug, Clone)]
struct LinkEquilibrium {
    r: Vec<f64>,
    v_lo: Vec<f64>,
    v_hi: Vec<f64>,
    s_lo: Vec<f64>,
    s_hi: Vec<f64>,
}

/// Everything needed to evaluate storages on individual samples.
#[derive(Debug, Clone)]
pub struct MonitorContext {
    n: usize,
    dim: usize,
    alpha: f64,
    h: f64,
    algorithm: Algorithm,
    transport: Transport,
    z_star: Vec<f64>,
    lambda_star: Vec<f64>,
    offsets: Vec<usize>,
    // φ_i(z*) + Γ_i(z*)λ_i*
    grad_star: Vec<Vec<f64>>,
    // Γ_i(z*)λ_i*
    nu_star: Vec<Vec<f64>>,
    // ξ*, or 2ξ* over scattering
    xi_hat: Vec<f64>,
    links: Vec<ScatteringLink>,
    link_eq: Vec<LinkEquilibrium>,
    link_steps: Vec<(usize, usize)>,
    agent_links: Vec<Vec<(usize, bool)>>,
    problem: ProblemInstance,
}

impl MonitorContext {
    /// `tel` only needs its header (the samples may still be empty).
    pub fn new(p: &ProblemInstance, g: &NetworkGraph, tel: &Telemetry, oracle: &OracleSolution) -> Self {
        let dim = p.dim();
        let offsets = p.constraint_offsets();
        let z = &oracle.z_star;
        let lambda = if oracle.lambda_star.len() == p.total_constraints() {
            oracle.lambda_star.clone()
        } else {
            vec![0.0; p.total_constraints()]
        };
        let mut grad_star = Vec::new();
        let mut nu_star = Vec::new();
        for i in 0..p.n() {
            let nu = p.jacobian_times(i, z, &lambda[offsets[i]..offsets[i + 1]]);
            let mut gs = p.agent(i).gradient(z);
            for (a, b) in gs.iter_mut().zip(&nu) {
                *a += b;
            }
            grad_star.push(gs);
            nu_star.push(nu);
        }
        let scattering = tel.transport == Transport::Scattering;
        let factor = if scattering { 2.0 } else { 1.0 };
        let xi_hat: Vec<f64> = oracle.xi_star.iter().map(|v| factor * v).collect();

        let mut links = Vec::new();
        let mut link_eq = Vec::new();
        let mut link_steps = Vec::new();
        let mut agent_links = vec![Vec::new(); p.n()];
        if scattering {
            for (k, info) in tel.links.iter().enumerate() {
                let link = ScatteringLink::new(
                    info.lo,
                    info.hi,
                    info.a,
                    info.b,
                    tel.eta,
                    info.delay_from_lo,
                    info.delay_from_hi,
                )
                .expect("link parameters were accepted by the simulator");
                let xs_lo = &oracle.xi_star[info.lo * dim..(info.lo + 1) * dim];
                let xs_hi = &oracle.xi_star[info.hi * dim..(info.hi + 1) * dim];
                let mut r = z.clone();
                r.extend(xs_lo.iter().zip(xs_hi).map(|(a, b)| a + b));
                let mut v_lo = vec![0.0; 2 * dim];
                let mut v_hi = vec![0.0; 2 * dim];
                for c in 0..dim {
                    v_lo[c] = info.b * (xs_lo[c] - xs_hi[c]);
                    v_hi[c] = -v_lo[c];
                }
                let s_lo = scattering::encode(&link, info.lo, &v_lo, &r, 0.0).expect("valid role").s;
                let s_hi = scattering::encode(&link, info.hi, &v_hi, &r, 0.0).expect("valid role").s;
                link_eq.push(LinkEquilibrium { r, v_lo, v_hi, s_lo, s_hi });
                link_steps.push((info.steps_from_lo, info.steps_from_hi));
                agent_links[info.lo].push((k, true));
                agent_links[info.hi].push((k, false));
                links.push(link);
            }
        }
        let _ = g;
        MonitorContext {
            n: p.n(),
            dim,
            alpha: tel.alpha,
            h: tel.h,
            algorithm: tel.algorithm,
            transport: tel.transport,
            z_star: z.clone(),
            lambda_star: lambda,
            offsets,
            grad_star,
            nu_star,
            xi_hat,
            links,
            link_eq,
            link_steps,
            agent_links,
            problem: p.clone(),
        }
    }

    fn constrained(&self) -> bool {
        self.algorithm == Algorithm::Constrained && *self.offsets.last().unwrap_or(&0) > 0
    }

    /// The storages whose dissipation inequality is claimed for this run.
    /// Naive delays come with no such claim, so nothing is listed for them.
    pub fn applicable(&self) -> Vec<StorageKind> {
        let mut out = Vec::new();
        let constrained_agents: Vec<usize> = (0..self.n)
            .filter(|&i| self.constrained() && self.offsets[i + 1] > self.offsets[i])
            .collect();
        match (self.transport, self.algorithm) {
            (Transport::Ideal, Algorithm::GradientConsensus) => out.push(StorageKind::SP),
            (Transport::Ideal, _) => {
                out.push(StorageKind::S);
                out.push(StorageKind::STilde);
                out.extend(constrained_agents.iter().map(|&i| StorageKind::U(i)));
                if self.constrained() {
                    out.push(StorageKind::W);
                }
            }
            (Transport::Scattering, _) => {
                out.extend((0..self.n).map(StorageKind::SBar));
                out.extend(constrained_agents.iter().map(|&i| StorageKind::U(i)));
                out.extend((0..self.n).map(StorageKind::WAgent));
                out.extend((0..self.links.len()).map(StorageKind::V));
                out.push(StorageKind::W);
            }
            (Transport::NaiveDelay, _) => {}
        }
        out
    }

    pub fn name(&self, kind: StorageKind) -> String {
        match kind {
            StorageKind::SP => "S_P".into(),
            StorageKind::S => "S".into(),
            StorageKind::STilde => "S_tilde".into(),
            StorageKind::SBar(i) => format!("Sbar_{}", i + 1),
            StorageKind::U(i) => format!("U_{}", i + 1),
            StorageKind::WAgent(i) => format!("W_{}", i + 1),
            StorageKind::V(k) => match self.links.get(k) {
                Some(l) => format!("V_{}_{}", l.lo + 1, l.hi + 1),
                None => format!("V_link{}", k + 1),
            },
            StorageKind::W => "W".into(),
        }
    }

    fn x<'a>(&self, s: &'a Sample, i: usize) -> &'a [f64] {
        &s.x[i * self.dim..(i + 1) * self.dim]
    }

    fn xi<'a>(&self, s: &'a Sample, i: usize) -> &'a [f64] {
        &s.xi[i * self.dim..(i + 1) * self.dim]
    }

    fn rho<'a>(&self, s: &'a Sample, i: usize) -> &'a [f64] {
        if s.rho.is_empty() {
            return &[];
        }
        &s.rho[self.offsets[i]..self.offsets[i + 1]]
    }

    // φ_i(x_i) + Γ_i(x_i)ρ_i, with ρ ignored by the unconstrained algorithms.
    fn local_gradient(&self, s: &Sample, i: usize) -> Vec<f64> {
        let x = self.x(s, i);
        let mut gi = self.problem.agent(i).gradient(x);
        let rho = self.rho(s, i);
        if self.constrained() && !rho.is_empty() {
            for (a, b) in gi.iter_mut().zip(self.problem.jacobian_times(i, x, rho)) {
                *a += b;
            }
        }
        gi
    }

    fn x_tilde(&self, s: &Sample, i: usize) -> Vec<f64> {
        self.x(s, i).iter().zip(&self.z_star).map(|(a, b)| a - b).collect()
    }

    fn sbar(&self, s: &Sample, i: usize) -> f64 {
        let xt = self.x_tilde(s, i);
        let xi = self.xi(s, i);
        let hat = &self.xi_hat[i * self.dim..(i + 1) * self.dim];
        0.5 * norm_sq(&xt) + 0.5 * xi.iter().zip(hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    fn u(&self, s: &Sample, i: usize) -> f64 {
        let lam = &self.lambda_star[self.offsets[i]..self.offsets[i + 1]];
        0.5 * self.rho(s, i).iter().zip(lam).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    fn v_link(&self, rec: &LinkRecord, k: usize) -> f64 {
        let eq = &self.link_eq[k];
        let (d_lo, d_hi) = self.link_steps[k];
        let shifted = |sum: &[f64], sq: f64, s_star: &[f64], d: usize| {
            sq - 2.0 * dot(s_star, sum) + d as f64 * norm_sq(s_star)
        };
        0.5 * self.h
            * (shifted(&rec.flight_sum_lo, rec.flight_sq_lo, &eq.s_lo, d_lo)
                + shifted(&rec.flight_sum_hi, rec.flight_sq_hi, &eq.s_hi, d_hi))
    }

    // r̄ᵀv̄ of agent i's port on link k.
    fn port_supply(&self, rec: &LinkRecord, k: usize, lower: bool) -> f64 {
        let eq = &self.link_eq[k];
        let (r, v, v_star) = if lower {
            (&rec.r_lo, &rec.v_lo, &eq.v_lo)
        } else {
            (&rec.r_hi, &rec.v_hi, &eq.v_hi)
        };
        r.iter()
            .zip(&eq.r)
            .zip(v.iter().zip(v_star))
            .map(|((r, rs), (v, vs))| (r - rs) * (v - vs))
            .sum()
    }

    fn links_of<'a>(&self, s: &'a Sample) -> Result<&'a [LinkRecord], MonitorError> {
        if s.links.len() != self.links.len() {
            return Err(MonitorError::MissingLinkRecords);
        }
        Ok(&s.links)
    }

    fn check_kind(&self, kind: StorageKind) -> Result<(), MonitorError> {
        let scattering = self.transport == Transport::Scattering;
        let ok = match kind {
            StorageKind::SP | StorageKind::S | StorageKind::STilde => true,
            StorageKind::U(i) => i < self.n,
            StorageKind::SBar(i) | StorageKind::WAgent(i) => scattering && i < self.n,
            StorageKind::V(k) => scattering && k < self.links.len(),
            StorageKind::W => true,
        };
        if ok {
            Ok(())
        } else {
            Err(MonitorError::NotApplicable(kind))
        }
    }

    /// Value of a storage at one sample.
    pub fn storage(&self, kind: StorageKind, s: &Sample) -> Result<f64, MonitorError> {
        self.check_kind(kind)?;
        Ok(match kind {
            StorageKind::SP => 0.5 * norm_sq(&s.x),
            StorageKind::S => 0.5 * (norm_sq(&s.x) + norm_sq(&s.xi)),
            StorageKind::STilde => {
                let mut acc = 0.0;
                for i in 0..self.n {
                    acc += norm_sq(&self.x_tilde(s, i));
                }
                acc += s.xi.iter().zip(&self.xi_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                0.5 * acc
            }
            StorageKind::SBar(i) => self.sbar(s, i),
            StorageKind::U(i) => self.u(s, i),
            StorageKind::WAgent(i) => self.sbar(s, i) + self.alpha * self.u(s, i),
            StorageKind::V(k) => self.v_link(&self.links_of(s)?[k], k),
            StorageKind::W => {
                let us: f64 = (0..self.n).map(|i| self.u(s, i)).sum();
                if self.transport == Transport::Scattering {
                    let recs = self.links_of(s)?;
                    let sb: f64 = (0..self.n).map(|i| self.sbar(s, i)).sum();
                    let vs: f64 = recs.iter().enumerate().map(|(k, r)| self.v_link(r, k)).sum();
                    sb + self.alpha * us + vs
                } else {
                    self.storage(StorageKind::STilde, s)? + self.alpha * us
                }
            }
        })
    }

    /// Permitted supply rate of a storage at one sample.
    pub fn supply(&self, kind: StorageKind, s: &Sample) -> Result<f64, MonitorError> {
        self.check_kind(kind)?;
        Ok(match kind {
            StorageKind::SP | StorageKind::S => (0..self.n)
                .map(|i| -self.alpha * dot(self.x(s, i), &self.local_gradient(s, i)))
                .sum(),
            StorageKind::STilde => (0..self.n).map(|i| self.xu_tilde(s, i)).sum(),
            StorageKind::U(i) => self.nu_supply(s, i),
            StorageKind::SBar(i) => {
                let recs = self.links_of(s)?;
                let ports: f64 = self.agent_links[i]
                    .iter()
                    .map(|&(k, lower)| self.port_supply(&recs[k], k, lower))
                    .sum();
                ports + self.xu_tilde(s, i)
            }
            StorageKind::WAgent(i) => {
                let recs = self.links_of(s)?;
                self.agent_links[i]
                    .iter()
                    .map(|&(k, lower)| self.port_supply(&recs[k], k, lower))
                    .sum()
            }
            StorageKind::V(k) => {
                let rec = &self.links_of(s)?[k];
                -(self.port_supply(rec, k, true) + self.port_supply(rec, k, false))
            }
            StorageKind::W => 0.0,
        })
    }

    // x̃_iᵀũ_i with ũ_i = −α(∇H_i(x_i, ρ_i) − ∇H_i(z*, λ_i*)).
    fn xu_tilde(&self, s: &Sample, i: usize) -> f64 {
        let gi = self.local_gradient(s, i);
        let xt = self.x_tilde(s, i);
        let star = &self.grad_star[i];
        -self.alpha * xt.iter().zip(gi.iter().zip(star)).map(|(x, (g, gs))| x * (g - gs)).sum::<f64>()
    }

    fn nu_supply(&self, s: &Sample, i: usize) -> f64 {
        let x = self.x(s, i);
        let nu = self.problem.jacobian_times(i, x, self.rho(s, i));
        let xt = self.x_tilde(s, i);
        xt.iter()
            .zip(nu.iter().zip(&self.nu_star[i]))
            .map(|(x, (a, b))| x * (a - b))
            .sum()
    }

    /// Port supply `−v̄_ijᵀr̄_ij − v̄_jiᵀr̄_ji` of link `k` at one sample.
    pub fn link_supply(&self, k: usize, s: &Sample) -> Result<f64, MonitorError> {
        self.supply(StorageKind::V(k), s)
    }
}

/// A storage time series and its supply rate at the same samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub name: String,
    pub kind: StorageKind,
    pub times: Vec<f64>,
    pub steps: Vec<usize>,
    pub values: Vec<f64>,
    pub supply: Vec<f64>,
}

impl StorageReport {
    /// `ΔS/Δt − σ` per sample interval. With consecutive steps the supply is
    /// taken at the left sample (exact for the Euler step); across a stride
    /// the endpoint average is used.
    pub fn dissipation_residuals(&self) -> Vec<f64> {
        (1..self.values.len())
            .map(|k| {
                let dt = self.times[k] - self.times[k - 1];
                let rate = (self.values[k] - self.values[k - 1]) / dt;
                let sigma = if self.steps[k] - self.steps[k - 1] == 1 {
                    self.supply[k - 1]
                } else {
                    0.5 * (self.supply[k - 1] + self.supply[k])
                };
                rate - sigma
            })
            .collect()
    }
}

/// Evaluates one storage over every sample of a run.
pub fn eval_storage(
    kind: StorageKind,
    tel: &Telemetry,
    p: &ProblemInstance,
    g: &NetworkGraph,
    oracle: Option<&OracleSolution>,
) -> Result<StorageReport, MonitorError> {
    let oracle = match (kind, oracle) {
        (_, Some(o)) => o.clone(),
        (StorageKind::SP | StorageKind::S, None) => OracleSolution {
            z_star: vec![0.0; p.dim()],
            lambda_star: vec![0.0; p.total_constraints()],
            xi_star: vec![0.0; p.n() * p.dim()],
            kkt: KktResidual::default(),
            achieved_residual: 0.0,
            method: "none".into(),
        },
        (_, None) => return Err(MonitorError::MissingOracle),
    };
    let ctx = MonitorContext::new(p, g, tel, &oracle);
    let mut report = StorageReport {
        name: ctx.name(kind),
        kind,
        times: Vec::with_capacity(tel.samples.len()),
        steps: Vec::with_capacity(tel.samples.len()),
        values: Vec::with_capacity(tel.samples.len()),
        supply: Vec::with_capacity(tel.samples.len()),
    };
    for s in &tel.samples {
        if needs_links(kind, &ctx) && s.links.is_empty() && s.step == tel.last().step && tel.meta.diverged {
            break;
        }
        report.times.push(s.t);
        report.steps.push(s.step);
        report.values.push(ctx.storage(kind, s)?);
        report.supply.push(ctx.supply(kind, s)?);
    }
    Ok(report)
}

fn needs_links(kind: StorageKind, ctx: &MonitorContext) -> bool {
    ctx.transport == Transport::Scattering
        && matches!(
            kind,
            StorageKind::SBar(_) | StorageKind::WAgent(_) | StorageKind::V(_) | StorageKind::W
        )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub excess: f64,
}

/// Outcome of a dissipation check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipationCheck {
    pub name: String,
    pub passed: bool,
    pub tol: f64,
    pub max_violation: f64,
    pub min_value: f64,
    /// Up to [`MAX_REPORTED_VIOLATIONS`] offending intervals, by left time.
    pub violations: Vec<Violation>,
}

pub const MAX_REPORTED_VIOLATIONS: usize = 20;

/// Compares `ΔS/Δt` with `supply` (one value per sample of `report`).
/// Fails on any excess above `tol` or on a storage value below
/// `−NONNEGATIVITY_TOL`.
pub fn check_dissipation(report: &StorageReport, supply: &[f64], tol: f64) -> DissipationCheck {
    let with_supply = StorageReport {
        supply: supply.to_vec(),
        ..report.clone()
    };
    let residuals = with_supply.dissipation_residuals();
    let mut violations = Vec::new();
    let mut max_violation = f64::NEG_INFINITY;
    for (k, &r) in residuals.iter().enumerate() {
        max_violation = max_violation.max(r);
        if !(r <= tol) && violations.len() < MAX_REPORTED_VIOLATIONS {
            violations.push(Violation { t: report.times[k], excess: r });
        }
    }
    let min_value = report.values.iter().copied().fold(f64::INFINITY, f64::min);
    let passed = violations.is_empty() && !(min_value < -NONNEGATIVITY_TOL) && residuals.iter().all(|r| r.is_finite());
    DissipationCheck {
        name: report.name.clone(),
        passed,
        tol,
        max_violation: if residuals.is_empty() { 0.0 } else { max_violation },
        min_value,
        violations,
    }
}

/// `50·h·(1 + peak state norm)` over the recorded samples.
pub fn default_tolerance(tel: &Telemetry) -> f64 {
    let peak = tel
        .samples
        .iter()
        .map(|s| (norm_sq(&s.x) + norm_sq(&s.xi) + norm_sq(&s.rho)).sqrt())
        .fold(0.0, f64::max);
    tolerance_for(tel.h, peak)
}

pub fn tolerance_for(h: f64, peak_state_norm: f64) -> f64 {
    50.0 * h * (1.0 + peak_state_norm)
}

/// Runs every applicable check on a recorded run.
pub fn check_all(
    tel: &Telemetry,
    p: &ProblemInstance,
    g: &NetworkGraph,
    oracle: &OracleSolution,
) -> Result<Vec<DissipationCheck>, MonitorError> {
    let ctx = MonitorContext::new(p, g, tel, oracle);
    let tol = default_tolerance(tel);
    ctx.applicable()
        .into_iter()
        .map(|k| {
            let r = eval_storage(k, tel, p, g, Some(oracle))?;
            Ok(check_dissipation(&r, &r.supply, tol))
        })
        .collect()
}

/// Dissipation checks evaluated at every simulation step through
/// [`crate::simulator::run_observed`], independent of the recording stride.
/// Also integrates each link's port supply for the port-passivity check.
#[derive(Debug, Clone)]
pub struct OnlineMonitor {
    ctx: MonitorContext,
    kinds: Vec<StorageKind>,
    prev: Option<(f64, usize, Vec<f64>, Vec<f64>)>,
    max_excess: Vec<f64>,
    min_value: Vec<f64>,
    candidates: Vec<Vec<Violation>>,
    nonfinite: Vec<bool>,
    peak: f64,
    h: f64,
    // per link: V(0), running ∫ supply, min over time of (∫ supply + V(0))
    port: Vec<(Option<f64>, f64, f64)>,
    /// Storage values at recorded samples, for CSV channels.
    pub channel_steps: Vec<usize>,
    pub channels: Vec<Vec<f64>>,
    stride: usize,
}

impl OnlineMonitor {
    pub fn new(ctx: MonitorContext, stride: usize) -> Self {
        let kinds = ctx.applicable();
        let k = kinds.len();
        let links = ctx.links.len();
        let h = ctx.h;
        OnlineMonitor {
            ctx,
            kinds,
            prev: None,
            max_excess: vec![f64::NEG_INFINITY; k],
            min_value: vec![f64::INFINITY; k],
            candidates: vec![Vec::new(); k],
            nonfinite: vec![false; k],
            peak: 0.0,
            h,
            port: vec![(None, 0.0, f64::INFINITY); links],
            channel_steps: Vec::new(),
            channels: vec![Vec::new(); k],
            stride: stride.max(1),
        }
    }

    pub fn kinds(&self) -> &[StorageKind] {
        &self.kinds
    }

    pub fn names(&self) -> Vec<String> {
        self.kinds.iter().map(|&k| self.ctx.name(k)).collect()
    }

    pub fn observe(&mut self, s: &Sample) {
        let scattering = self.ctx.transport == Transport::Scattering;
        if scattering && s.links.is_empty() && !self.ctx.links.is_empty() {
            // truncated final sample of a diverged run carries no link records
            return;
        }
        self.peak = self
            .peak
            .max((norm_sq(&s.x) + norm_sq(&s.xi) + norm_sq(&s.rho)).sqrt());
        let values: Vec<f64> = self
            .kinds
            .iter()
            .map(|&k| self.ctx.storage(k, s).unwrap_or(f64::NAN))
            .collect();
        let supplies: Vec<f64> = self
            .kinds
            .iter()
            .map(|&k| self.ctx.supply(k, s).unwrap_or(f64::NAN))
            .collect();
        if let Some((t0, step0, v0, sup0)) = &self.prev {
            let dt = s.t - t0;
            for k in 0..self.kinds.len() {
                let sigma = if s.step - step0 == 1 {
                    sup0[k]
                } else {
                    0.5 * (sup0[k] + supplies[k])
                };
                let excess = (values[k] - v0[k]) / dt - sigma;
                if !excess.is_finite() {
                    self.nonfinite[k] = true;
                    continue;
                }
                self.max_excess[k] = self.max_excess[k].max(excess);
                // the final tolerance is at least 50h, so smaller excesses can never fail
                if excess > 50.0 * self.h {
                    let c = &mut self.candidates[k];
                    c.push(Violation { t: *t0, excess });
                    if c.len() > 4 * MAX_REPORTED_VIOLATIONS {
                        c.sort_by(|a, b| b.excess.total_cmp(&a.excess));
                        c.truncate(MAX_REPORTED_VIOLATIONS);
                    }
                }
            }
        }
        for (k, v) in values.iter().enumerate() {
            self.min_value[k] = self.min_value[k].min(*v);
        }
        if scattering {
            for l in 0..self.ctx.links.len() {
                let rec = &s.links[l];
                let (v0, integral, min_margin) = &mut self.port[l];
                let vz = *v0.get_or_insert_with(|| self.ctx.v_link(rec, l));
                *min_margin = min_margin.min(*integral + vz);
                *integral += self.h * self.ctx.link_supply(l, s).unwrap_or(f64::NAN);
            }
        }
        if s.step % self.stride == 0 {
            self.channel_steps.push(s.step);
            for (c, v) in self.channels.iter_mut().zip(&values) {
                c.push(*v);
            }
        }
        self.prev = Some((s.t, s.step, values, supplies));
    }

    /// Storage channels aligned with the recorded samples of `tel`. Steps the
    /// monitor did not keep (only possible for an off-stride final step) use
    /// the last observed values; anything else is NaN.
    pub fn channels_for(&self, tel: &Telemetry) -> Vec<(String, Vec<f64>)> {
        let names = self.names();
        let index: std::collections::HashMap<usize, usize> =
            self.channel_steps.iter().enumerate().map(|(k, &s)| (s, k)).collect();
        names
            .into_iter()
            .enumerate()
            .map(|(k, name)| {
                let col = tel
                    .samples
                    .iter()
                    .map(|smp| match index.get(&smp.step) {
                        Some(&r) => self.channels[k][r],
                        None => match &self.prev {
                            Some((_, step, v, _)) if *step == smp.step => v[k],
                            _ => f64::NAN,
                        },
                    })
                    .collect();
                (name, col)
            })
            .collect()
    }

    pub fn tolerance(&self) -> f64 {
        tolerance_for(self.h, self.peak)
    }

    pub fn checks(&self) -> Vec<DissipationCheck> {
        let tol = self.tolerance();
        (0..self.kinds.len())
            .map(|k| {
                let mut violations: Vec<Violation> =
                    self.candidates[k].iter().filter(|v| v.excess > tol).cloned().collect();
                violations.sort_by(|a, b| a.t.total_cmp(&b.t));
                violations.truncate(MAX_REPORTED_VIOLATIONS);
                let passed = violations.is_empty()
                    && !self.nonfinite[k]
                    && !(self.min_value[k] < -NONNEGATIVITY_TOL);
                DissipationCheck {
                    name: self.ctx.name(self.kinds[k]),
                    passed,
                    tol,
                    max_violation: if self.max_excess[k].is_finite() { self.max_excess[k] } else { 0.0 },
                    min_value: self.min_value[k],
                    violations,
                }
            })
            .collect()
    }

    /// Per link: `min_t (∫₀ᵗ σ_ij + V_ij(0))`; nonnegative (up to roundoff) for a passive channel.
    pub fn port_passivity_margins(&self) -> Vec<(String, f64)> {
        self.port
            .iter()
            .enumerate()
            .map(|(l, (_, _, m))| (self.ctx.name(StorageKind::V(l)), *m))
            .collect()
    }
}

/// Consensus error, optimality gap and KKT residual at each sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSeries {
    pub times: Vec<f64>,
    pub consensus_error: Vec<f64>,
    pub optimality_gap: Vec<f64>,
    pub kkt: Vec<KktResidual>,
    /// `‖ρ − λ*‖`; informative only, since multipliers need not be unique.
    pub multiplier_error: Vec<f64>,
}

impl ConvergenceSeries {
    pub fn terminal(&self) -> TerminalMetrics {
        let k = self.times.len() - 1;
        TerminalMetrics {
            t: self.times[k],
            consensus_error: self.consensus_error[k],
            optimality_gap: self.optimality_gap[k],
            kkt: self.kkt[k],
            multiplier_error: self.multiplier_error[k],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalMetrics {
    pub t: f64,
    pub consensus_error: f64,
    pub optimality_gap: f64,
    pub kkt: KktResidual,
    pub multiplier_error: f64,
}

/// `max_i ‖x_i − mean(x)‖`.
pub fn consensus_error(x: &[f64], n: usize, dim: usize) -> f64 {
    let mut mean = vec![0.0; dim];
    for i in 0..n {
        for k in 0..dim {
            mean[k] += x[i * dim + k] / n as f64;
        }
    }
    (0..n)
        .map(|i| {
            let d: Vec<f64> = (0..dim).map(|k| x[i * dim + k] - mean[k]).collect();
            norm(&d)
        })
        .fold(0.0, f64::max)
}

/// `max_i ‖x_i − z*‖`.
pub fn optimality_gap(x: &[f64], z_star: &[f64]) -> f64 {
    let dim = z_star.len();
    x.chunks(dim)
        .map(|xi| norm(&xi.iter().zip(z_star).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .fold(0.0, f64::max)
}

pub fn convergence_metrics(tel: &Telemetry, p: &ProblemInstance, oracle: &OracleSolution) -> ConvergenceSeries {
    let mut out = ConvergenceSeries {
        times: Vec::new(),
        consensus_error: Vec::new(),
        optimality_gap: Vec::new(),
        kkt: Vec::new(),
        multiplier_error: Vec::new(),
    };
    for s in &tel.samples {
        out.times.push(s.t);
        out.consensus_error.push(consensus_error(&s.x, tel.n, tel.dim));
        out.optimality_gap.push(optimality_gap(&s.x, &oracle.z_star));
        let mean = tel.mean_x(s);
        let rho = if s.rho.len() == p.total_constraints() {
            s.rho.clone()
        } else {
            vec![0.0; p.total_constraints()]
        };
        out.kkt.push(kkt_residual(p, &mean, &rho).unwrap_or(KktResidual {
            stationarity: f64::NAN,
            primal_violation: f64::NAN,
            dual_negativity: f64::NAN,
            complementarity: f64::NAN,
        }));
        let me = if oracle.lambda_star.len() == rho.len() {
            norm(&rho.iter().zip(&oracle.lambda_star).map(|(a, b)| a - b).collect::<Vec<_>>())
        } else {
            0.0
        };
        out.multiplier_error.push(me);
    }
    out
}

/// `−x̃ᵀL̄_P x̃ − α Σ_i (x_i − z*)ᵀ(φ_i(x_i) − φ_i(z*))`: the time derivative of
/// `S_tilde` along the delay-free PI loop. Nonpositive for convex costs.
pub fn lyapunov_derivative(p: &ProblemInstance, g: &NetworkGraph, alpha: f64, x: &[f64], z_star: &[f64]) -> f64 {
    let dim = p.dim();
    let xt: Vec<f64> = x
        .chunks(dim)
        .flat_map(|xi| xi.iter().zip(z_star).map(|(a, b)| a - b).collect::<Vec<_>>())
        .collect();
    let lx = g.laplacian_apply(LaplacianKind::P, dim, &xt);
    let mut acc = -dot(&xt, &lx);
    for i in 0..p.n() {
        let a = p.agent(i);
        let gi = a.gradient(&x[i * dim..(i + 1) * dim]);
        let gs = a.gradient(z_star);
        acc -= alpha
            * (0..dim)
                .map(|k| xt[i * dim + k] * (gi[k] - gs[k]))
                .sum::<f64>();
    }
    acc
}
