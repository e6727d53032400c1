//! Convex problem instances `min Σ f_i(z)  s.t.  g_i(z) ≤ 0`.
//!
//! Each agent owns a [`LocalObjective`]: its private cost `f_i`, gradient
//! `φ_i`, constraint vector `g_i` (possibly empty) and the Jacobian `Γ_i`
//! whose columns are the constraint gradients. Evaluators are pure so a
//! [`ProblemInstance`] can be shared across threads.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{dot, norm};

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemError {
    NonSpdWeight { agent: usize },
    CoordinateNotCovered { coordinate: usize },
    SlaterViolated { agent: usize, value: f64 },
    MissingSlaterPoint,
    EmptyHalfplaneSet { agent: usize },
    DimensionMismatch { expected: usize, got: usize },
    DegenerateEllipse,
    NotPositiveDefinite { min_eig: f64 },
    EmptyProblem,
}

impl fmt::Display for ProblemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemError::NonSpdWeight { agent } => {
                write!(f, "weight of agent {agent} is not symmetric positive definite")
            }
            ProblemError::CoordinateNotCovered { coordinate } => {
                write!(f, "coordinate {coordinate} is not owned by any agent")
            }
            ProblemError::SlaterViolated { agent, value } => write!(
                f,
                "Slater point is not strictly feasible for agent {agent} (max g = {value})"
            ),
            ProblemError::MissingSlaterPoint => write!(f, "constrained problem has no Slater point"),
            ProblemError::EmptyHalfplaneSet { agent } => {
                write!(f, "agent {agent} has no halfplanes")
            }
            ProblemError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            ProblemError::DegenerateEllipse => write!(f, "ellipse shape maps a halfplane normal to zero"),
            ProblemError::NotPositiveDefinite { min_eig } => {
                write!(f, "ellipse shape is not positive definite (min eigenvalue {min_eig})")
            }
            ProblemError::EmptyProblem => write!(f, "problem has no agents"),
        }
    }
}

impl std::error::Error for ProblemError {}

/// One agent's private data.
pub trait LocalObjective: fmt::Debug + Send + Sync {
    /// Decision dimension `N`.
    fn dim(&self) -> usize;

    fn cost(&self, z: &[f64]) -> f64;

    /// `φ_i(z) = ∇f_i(z)`.
    fn gradient(&self, z: &[f64]) -> Vec<f64>;

    /// `m_i`; zero means the agent is unconstrained.
    fn constraint_count(&self) -> usize {
        0
    }

    fn constraints(&self, _z: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    /// Columns of `Γ_i(z)`, one gradient per constraint.
    fn constraint_jacobian(&self, _z: &[f64]) -> Vec<Vec<f64>> {
        Vec::new()
    }

    /// Coordinates (0-based) in which `f_i` is strictly convex.
    fn strict_coordinates(&self) -> Vec<usize> {
        (0..self.dim()).collect()
    }

    /// Hessian of `f_i`; defaults to central differences of the gradient.
    fn hessian(&self, z: &[f64]) -> DMatrix<f64> {
        fd_jacobian(|p| self.gradient(p), z, self.dim())
    }

    /// Hessian of constraint `l`; defaults to central differences of its gradient.
    fn constraint_hessian(&self, z: &[f64], l: usize) -> DMatrix<f64> {
        fd_jacobian(|p| self.constraint_jacobian(p)[l].clone(), z, self.dim())
    }

    /// Domain check for costs that are only defined on part of `R^N`.
    fn check_point(&self, _z: &[f64]) -> Result<(), ProblemError> {
        Ok(())
    }

    /// Distance to the edge of the cost's domain, when the domain is restricted.
    /// The simulator rejects steps that push this below its floor.
    fn domain_margin(&self, _z: &[f64]) -> Option<f64> {
        None
    }

    /// Initial estimate drawn uniformly from `[0, 1]^N` unless the family needs otherwise.
    fn sample_initial(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.random::<f64>()).collect()
    }
}

fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, z: &[f64], n: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(n, n);
    let mut p = z.to_vec();
    for k in 0..n {
        let step = 1e-6 * (1.0 + z[k].abs());
        p[k] = z[k] + step;
        let gp = f(&p);
        p[k] = z[k] - step;
        let gm = f(&p);
        p[k] = z[k];
        for r in 0..n {
            h[(r, k)] = (gp[r] - gm[r]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

/// `f_i(z) = ½ (z − c)ᵀ W (z − c)`, optionally with linear constraints `A z ≤ b`.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    pub target: Vec<f64>,
    pub weight: DMatrix<f64>,
    pub constraint_rows: Vec<Vec<f64>>,
    pub constraint_rhs: Vec<f64>,
}

impl QuadraticCost {
    fn residual(&self, z: &[f64]) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(z.len(), z.iter().zip(&self.target).map(|(a, b)| a - b))
    }
}

impl LocalObjective for QuadraticCost {
    fn dim(&self) -> usize {
        self.target.len()
    }

    fn cost(&self, z: &[f64]) -> f64 {
        let r = self.residual(z);
        0.5 * r.dot(&(&self.weight * &r))
    }

    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        (&self.weight * self.residual(z)).iter().copied().collect()
    }

    fn constraint_count(&self) -> usize {
        self.constraint_rows.len()
    }

    fn constraints(&self, z: &[f64]) -> Vec<f64> {
        self.constraint_rows
            .iter()
            .zip(&self.constraint_rhs)
            .map(|(row, b)| dot(row, z) - b)
            .collect()
    }

    fn constraint_jacobian(&self, _z: &[f64]) -> Vec<Vec<f64>> {
        self.constraint_rows.clone()
    }

    fn hessian(&self, _z: &[f64]) -> DMatrix<f64> {
        self.weight.clone()
    }

    fn constraint_hessian(&self, _z: &[f64], _l: usize) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), self.dim())
    }
}

/// `f_i(z) = (z_l − c)²`, flat in every other coordinate.
#[derive(Debug, Clone)]
pub struct PartialQuadraticCost {
    pub dim: usize,
    pub coordinate: usize,
    pub target: f64,
}

impl LocalObjective for PartialQuadraticCost {
    fn dim(&self) -> usize {
        self.dim
    }

    fn cost(&self, z: &[f64]) -> f64 {
        (z[self.coordinate] - self.target).powi(2)
    }

    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        g[self.coordinate] = 2.0 * (z[self.coordinate] - self.target);
        g
    }

    fn strict_coordinates(&self) -> Vec<usize> {
        vec![self.coordinate]
    }

    fn hessian(&self, _z: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        h[(self.coordinate, self.coordinate)] = 2.0;
        h
    }
}

/// A closed halfplane `{p : nᵀp ≤ d}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Halfplane {
    pub normal: [f64; 2],
    pub offset: f64,
}

/// A 2-D line segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: [f64; 2],
    pub end: [f64; 2],
}

impl Segment {
    /// Closest point of the segment to `p`.
    pub fn project(&self, p: [f64; 2]) -> [f64; 2] {
        let d = [self.end[0] - self.start[0], self.end[1] - self.start[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        if len2 == 0.0 {
            return self.start;
        }
        let t = (((p[0] - self.start[0]) * d[0] + (p[1] - self.start[1]) * d[1]) / len2)
            .clamp(0.0, 1.0);
        [self.start[0] + t * d[0], self.start[1] + t * d[1]]
    }
}

/// Weight of the `‖q‖²` term that makes the localization cost strictly convex in `q`.
pub const LOCALIZATION_REGULARIZER: f64 = 1e-5;

/// Ellipse localization agent. The decision packs the center `q` and the
/// symmetric shape `Q` as `z = (q₁, q₂, Q₁₁, Q₁₂, Q₂₂)`; the ellipse is
/// `Ω(q, Q) = {q + Q u : ‖u‖ ≤ 1}`.
///
/// `f_i = −log det Q + w · dist²(q, C_i) + 1e−5 ‖q‖²`, and each halfplane
/// contributes `nᵀq + ‖Q n‖ − d ≤ 0`, i.e. `Ω ⊆ {nᵀp ≤ d}`.
#[derive(Debug, Clone)]
pub struct Localization2dAgent {
    pub segment: Segment,
    pub halfplanes: Vec<Halfplane>,
    pub w: f64,
}

/// Unpacks `(Q₁₁, Q₁₂, Q₂₂)` from a localization decision vector.
pub fn ellipse_shape(z: &[f64]) -> [[f64; 2]; 2] {
    [[z[2], z[3]], [z[3], z[4]]]
}

/// Smallest eigenvalue of the packed 2×2 shape matrix.
pub fn shape_min_eig(z: &[f64]) -> f64 {
    let (a, b, c) = (z[2], z[3], z[4]);
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    mean - rad
}

impl Localization2dAgent {
    fn shape_times(z: &[f64], n: [f64; 2]) -> [f64; 2] {
        let q = ellipse_shape(z);
        [q[0][0] * n[0] + q[0][1] * n[1], q[1][0] * n[0] + q[1][1] * n[1]]
    }
}

impl LocalObjective for Localization2dAgent {
    fn dim(&self) -> usize {
        5
    }

    fn cost(&self, z: &[f64]) -> f64 {
        let det = z[2] * z[4] - z[3] * z[3];
        if det <= 0.0 || z[2] <= 0.0 {
            return f64::INFINITY;
        }
        let q = [z[0], z[1]];
        let p = self.segment.project(q);
        let d2 = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
        -det.ln() + self.w * d2 + LOCALIZATION_REGULARIZER * (q[0] * q[0] + q[1] * q[1])
    }

    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let det = z[2] * z[4] - z[3] * z[3];
        let q = [z[0], z[1]];
        let p = self.segment.project(q);
        vec![
            2.0 * self.w * (q[0] - p[0]) + 2.0 * LOCALIZATION_REGULARIZER * q[0],
            2.0 * self.w * (q[1] - p[1]) + 2.0 * LOCALIZATION_REGULARIZER * q[1],
            -z[4] / det,
            2.0 * z[3] / det,
            -z[2] / det,
        ]
    }

    fn constraint_count(&self) -> usize {
        self.halfplanes.len()
    }

    fn constraints(&self, z: &[f64]) -> Vec<f64> {
        self.halfplanes
            .iter()
            .map(|h| {
                let u = Self::shape_times(z, h.normal);
                h.normal[0] * z[0] + h.normal[1] * z[1] + (u[0] * u[0] + u[1] * u[1]).sqrt()
                    - h.offset
            })
            .collect()
    }

    fn constraint_jacobian(&self, z: &[f64]) -> Vec<Vec<f64>> {
        self.halfplanes
            .iter()
            .map(|h| {
                let n = h.normal;
                let u = Self::shape_times(z, n);
                let len = (u[0] * u[0] + u[1] * u[1]).sqrt();
                // Qn ≠ 0 whenever Q ≻ 0; the simulator keeps Q positive definite.
                let (e0, e1) = if len > 0.0 { (u[0] / len, u[1] / len) } else { (0.0, 0.0) };
                vec![
                    n[0],
                    n[1],
                    e0 * n[0],
                    e0 * n[1] + e1 * n[0],
                    e1 * n[1],
                ]
            })
            .collect()
    }

    fn check_point(&self, z: &[f64]) -> Result<(), ProblemError> {
        let min_eig = shape_min_eig(z);
        if !(min_eig > 0.0) {
            return Err(ProblemError::NotPositiveDefinite { min_eig });
        }
        for h in &self.halfplanes {
            let u = Self::shape_times(z, h.normal);
            if u[0] == 0.0 && u[1] == 0.0 {
                return Err(ProblemError::DegenerateEllipse);
            }
        }
        Ok(())
    }

    fn domain_margin(&self, z: &[f64]) -> Option<f64> {
        Some(shape_min_eig(z))
    }

    /// Center uniform in `[0, 1]²`, shape `Q = I`.
    fn sample_initial(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![rng.random::<f64>(), rng.random::<f64>(), 1.0, 0.0, 1.0]
    }
}

/// A problem instance: `n` agents sharing the decision dimension `N`.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    dim: usize,
    agents: Vec<Arc<dyn LocalObjective>>,
    slater_point: Option<Vec<f64>>,
    family: String,
}

impl ProblemInstance {
    /// Assembles agents into an instance. All agents must share one dimension.
    pub fn new(
        family: impl Into<String>,
        agents: Vec<Arc<dyn LocalObjective>>,
    ) -> Result<Self, ProblemError> {
        let dim = agents.first().ok_or(ProblemError::EmptyProblem)?.dim();
        for a in &agents {
            if a.dim() != dim {
                return Err(ProblemError::DimensionMismatch {
                    expected: dim,
                    got: a.dim(),
                });
            }
        }
        Ok(ProblemInstance {
            dim,
            agents,
            slater_point: None,
            family: family.into(),
        })
    }

    /// Attaches a strictly feasible point, validated against every constraint.
    pub fn with_slater_point(mut self, point: Vec<f64>) -> Result<Self, ProblemError> {
        if point.len() != self.dim {
            return Err(ProblemError::DimensionMismatch {
                expected: self.dim,
                got: point.len(),
            });
        }
        for (i, a) in self.agents.iter().enumerate() {
            let worst = a.constraints(&point).into_iter().fold(f64::NEG_INFINITY, f64::max);
            if worst >= 0.0 {
                return Err(ProblemError::SlaterViolated {
                    agent: i,
                    value: worst,
                });
            }
        }
        self.slater_point = Some(point);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn agent(&self, i: usize) -> &dyn LocalObjective {
        self.agents[i].as_ref()
    }

    pub fn agents(&self) -> impl Iterator<Item = &dyn LocalObjective> {
        self.agents.iter().map(|a| a.as_ref())
    }

    pub fn slater_point(&self) -> Option<&[f64]> {
        self.slater_point.as_deref()
    }

    /// Per-agent constraint counts `m_i`.
    pub fn constraint_counts(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.constraint_count()).collect()
    }

    /// `m = Σ m_i`.
    pub fn total_constraints(&self) -> usize {
        self.agents.iter().map(|a| a.constraint_count()).sum()
    }

    pub fn is_constrained(&self) -> bool {
        self.total_constraints() > 0
    }

    /// Offsets of each agent's block inside a stacked multiplier vector.
    pub fn constraint_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.n() + 1);
        let mut acc = 0;
        off.push(0);
        for a in &self.agents {
            acc += a.constraint_count();
            off.push(acc);
        }
        off
    }

    pub fn total_cost(&self, z: &[f64]) -> f64 {
        self.agents.iter().map(|a| a.cost(z)).sum()
    }

    /// `Γ_i(z) λ_i`.
    pub fn jacobian_times(&self, i: usize, z: &[f64], lambda_i: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (col, &l) in self.agents[i].constraint_jacobian(z).iter().zip(lambda_i) {
            for (o, c) in out.iter_mut().zip(col) {
                *o += c * l;
            }
        }
        out
    }

    /// Stacked `g(z) = [g_1(z); …; g_n(z)]`.
    pub fn all_constraints(&self, z: &[f64]) -> Vec<f64> {
        self.agents.iter().flat_map(|a| a.constraints(z)).collect()
    }

    /// True iff every agent owns at least one strictly convex coordinate and together they cover `{0..N−1}`.
    pub fn strictness_covers(&self) -> bool {
        let mut seen = vec![false; self.dim];
        for a in &self.agents {
            for c in a.strict_coordinates() {
                if c < self.dim {
                    seen[c] = true;
                }
            }
        }
        seen.iter().all(|&s| s)
    }
}

fn check_spd(w: &DMatrix<f64>, agent: usize) -> Result<(), ProblemError> {
    let sym = (w - w.transpose()).abs().max() <= 1e-12 * (1.0 + w.abs().max());
    if !sym || w.clone().cholesky().is_none() {
        return Err(ProblemError::NonSpdWeight { agent });
    }
    Ok(())
}

fn quadratic_agents(
    dim: usize,
    targets: &[Vec<f64>],
    weights: Option<&[DMatrix<f64>]>,
) -> Result<Vec<QuadraticCost>, ProblemError> {
    if targets.is_empty() {
        return Err(ProblemError::EmptyProblem);
    }
    let mut out = Vec::with_capacity(targets.len());
    for (i, c) in targets.iter().enumerate() {
        if c.len() != dim {
            return Err(ProblemError::DimensionMismatch {
                expected: dim,
                got: c.len(),
            });
        }
        let w = match weights {
            Some(ws) => {
                let w = ws.get(i).ok_or(ProblemError::DimensionMismatch {
                    expected: targets.len(),
                    got: ws.len(),
                })?;
                if w.nrows() != dim || w.ncols() != dim {
                    return Err(ProblemError::DimensionMismatch {
                        expected: dim,
                        got: w.nrows(),
                    });
                }
                check_spd(w, i)?;
                w.clone()
            }
            None => DMatrix::identity(dim, dim),
        };
        out.push(QuadraticCost {
            target: c.clone(),
            weight: w,
            constraint_rows: Vec::new(),
            constraint_rhs: Vec::new(),
        });
    }
    Ok(out)
}

/// `f_i(z) = ½(z − c_i)ᵀW_i(z − c_i)`; `weights = None` means `W_i = I`.
pub fn quadratic_problem(
    dim: usize,
    targets: Vec<Vec<f64>>,
    weights: Option<Vec<DMatrix<f64>>>,
) -> Result<ProblemInstance, ProblemError> {
    let agents = quadratic_agents(dim, &targets, weights.as_deref())?
        .into_iter()
        .map(|a| Arc::new(a) as Arc<dyn LocalObjective>)
        .collect();
    ProblemInstance::new("quadratic", agents)
}

/// `f_i(z) = (z_{l_i} − c_i)²` with 0-based coordinates `l_i`.
pub fn partial_quadratic_problem(
    dim: usize,
    coordinates: Vec<usize>,
    targets: Vec<f64>,
) -> Result<ProblemInstance, ProblemError> {
    if coordinates.len() != targets.len() {
        return Err(ProblemError::DimensionMismatch {
            expected: coordinates.len(),
            got: targets.len(),
        });
    }
    for &l in &coordinates {
        if l >= dim {
            return Err(ProblemError::DimensionMismatch { expected: dim, got: l + 1 });
        }
    }
    if let Some(missing) = (0..dim).find(|c| !coordinates.contains(c)) {
        return Err(ProblemError::CoordinateNotCovered { coordinate: missing });
    }
    let agents = coordinates
        .into_iter()
        .zip(targets)
        .map(|(coordinate, target)| {
            Arc::new(PartialQuadraticCost {
                dim,
                coordinate,
                target,
            }) as Arc<dyn LocalObjective>
        })
        .collect();
    ProblemInstance::new("partial_quadratic", agents)
}

/// A linear inequality `aᵀz ≤ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub a: Vec<f64>,
    pub b: f64,
}

/// Quadratic costs with per-agent linear constraints `A_i z ≤ b_i`.
pub fn constrained_quadratic_problem(
    dim: usize,
    targets: Vec<Vec<f64>>,
    weights: Option<Vec<DMatrix<f64>>>,
    constraints: Vec<Vec<LinearConstraint>>,
    slater_point: Vec<f64>,
) -> Result<ProblemInstance, ProblemError> {
    let mut agents = quadratic_agents(dim, &targets, weights.as_deref())?;
    if constraints.len() != agents.len() {
        return Err(ProblemError::DimensionMismatch {
            expected: agents.len(),
            got: constraints.len(),
        });
    }
    for (agent, cons) in agents.iter_mut().zip(constraints) {
        for c in cons {
            if c.a.len() != dim {
                return Err(ProblemError::DimensionMismatch {
                    expected: dim,
                    got: c.a.len(),
                });
            }
            agent.constraint_rows.push(c.a);
            agent.constraint_rhs.push(c.b);
        }
    }
    let agents = agents
        .into_iter()
        .map(|a| Arc::new(a) as Arc<dyn LocalObjective>)
        .collect();
    ProblemInstance::new("constrained_quadratic", agents)?.with_slater_point(slater_point)
}

/// 2-D ellipse localization: one segment and a nonempty halfplane set per agent.
pub fn localization2d_problem(
    segments: Vec<Segment>,
    halfplanes: Vec<Vec<Halfplane>>,
    w: f64,
) -> Result<ProblemInstance, ProblemError> {
    if segments.len() != halfplanes.len() {
        return Err(ProblemError::DimensionMismatch {
            expected: segments.len(),
            got: halfplanes.len(),
        });
    }
    let mut agents: Vec<Arc<dyn LocalObjective>> = Vec::new();
    for (i, (segment, hs)) in segments.into_iter().zip(halfplanes).enumerate() {
        if hs.is_empty() {
            return Err(ProblemError::EmptyHalfplaneSet { agent: i });
        }
        agents.push(Arc::new(Localization2dAgent {
            segment,
            halfplanes: hs,
            w,
        }));
    }
    ProblemInstance::new("localization2d", agents)
}

/// `∇f(z) = Σ_i φ_i(z)`.
pub fn global_gradient(p: &ProblemInstance, z: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; p.dim()];
    for a in p.agents() {
        for (acc, v) in g.iter_mut().zip(a.gradient(z)) {
            *acc += v;
        }
    }
    g
}

/// The four nonnegative KKT residual components at `(z, λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal_violation: f64,
    pub dual_negativity: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max_component(&self) -> f64 {
        self.stationarity
            .max(self.primal_violation)
            .max(self.dual_negativity)
            .max(self.complementarity)
    }
}

pub fn kkt_residual(p: &ProblemInstance, z: &[f64], lambda: &[f64]) -> Result<KktResidual, ProblemError> {
    let m = p.total_constraints();
    if lambda.len() != m {
        return Err(ProblemError::DimensionMismatch {
            expected: m,
            got: lambda.len(),
        });
    }
    if z.len() != p.dim() {
        return Err(ProblemError::DimensionMismatch {
            expected: p.dim(),
            got: z.len(),
        });
    }
    let offsets = p.constraint_offsets();
    let mut stat = global_gradient(p, z);
    for i in 0..p.n() {
        let gl = p.jacobian_times(i, z, &lambda[offsets[i]..offsets[i + 1]]);
        for (s, v) in stat.iter_mut().zip(gl) {
            *s += v;
        }
    }
    let g = p.all_constraints(z);
    let primal: Vec<f64> = g.iter().map(|v| v.max(0.0)).collect();
    let dual: Vec<f64> = lambda.iter().map(|v| (-v).max(0.0)).collect();
    let comp: Vec<f64> = lambda.iter().zip(&g).map(|(l, gv)| l * gv).collect();
    Ok(KktResidual {
        stationarity: norm(&stat),
        primal_violation: norm(&primal),
        dual_negativity: norm(&dual),
        complementarity: norm(&comp),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_vanishes_at_own_target() {
        let p = quadratic_problem(2, vec![vec![1.0, -2.0], vec![0.0, 3.0]], None).unwrap();
        assert_eq!(p.agent(0).gradient(&[1.0, -2.0]), vec![0.0, 0.0]);
        assert_eq!(global_gradient(&p, &[0.5, 0.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn two_agent_scalar_optimum_is_midpoint() {
        let p = quadratic_problem(1, vec![vec![0.0], vec![2.0]], None).unwrap();
        assert_eq!(global_gradient(&p, &[1.0]), vec![0.0]);
    }

    #[test]
    fn non_spd_weight_rejected() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = quadratic_problem(2, vec![vec![0.0, 0.0]], Some(vec![w])).unwrap_err();
        assert_eq!(err, ProblemError::NonSpdWeight { agent: 0 });
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(quadratic_problem(2, vec![vec![0.0, 0.0]], Some(vec![asym])).is_err());
    }

    #[test]
    fn partial_quadratic_flat_in_foreign_coordinates() {
        let p = partial_quadratic_problem(2, vec![0, 1], vec![3.0, 4.0]).unwrap();
        let g = p.agent(0).gradient(&[1.0, 7.0]);
        assert_eq!(g[1], 0.0);
        assert_eq!(global_gradient(&p, &[3.0, 4.0]), vec![0.0, 0.0]);
        assert!(p.strictness_covers());
        assert_eq!(
            partial_quadratic_problem(3, vec![0, 1], vec![1.0, 1.0]).unwrap_err(),
            ProblemError::CoordinateNotCovered { coordinate: 2 }
        );
    }

    fn one_d_constrained() -> ProblemInstance {
        constrained_quadratic_problem(
            1,
            vec![vec![2.0]],
            None,
            vec![vec![LinearConstraint { a: vec![1.0], b: 1.0 }]],
            vec![0.0],
        )
        .unwrap()
    }

    #[test]
    fn kkt_residual_of_hand_solved_example() {
        let p = one_d_constrained();
        let r = kkt_residual(&p, &[1.0], &[1.0]).unwrap();
        assert_eq!(r, KktResidual::default());
        let neg = kkt_residual(&p, &[1.0], &[-1.0]).unwrap();
        assert!(neg.dual_negativity > 0.0);
        assert!(matches!(
            kkt_residual(&p, &[1.0], &[]),
            Err(ProblemError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn interior_point_with_zero_multiplier_only_stationarity() {
        let p = one_d_constrained();
        let r = kkt_residual(&p, &[0.5], &[0.0]).unwrap();
        assert_eq!(r.primal_violation, 0.0);
        assert_eq!(r.dual_negativity, 0.0);
        assert_eq!(r.complementarity, 0.0);
        assert!((r.stationarity - 1.5).abs() < 1e-15);
    }

    #[test]
    fn slater_point_must_be_strictly_feasible() {
        let err = constrained_quadratic_problem(
            1,
            vec![vec![2.0]],
            None,
            vec![vec![LinearConstraint { a: vec![1.0], b: 1.0 }]],
            vec![1.0],
        )
        .unwrap_err();
        assert!(matches!(err, ProblemError::SlaterViolated { agent: 0, .. }));
    }

    fn unit_box_agent() -> Localization2dAgent {
        Localization2dAgent {
            segment: Segment {
                start: [0.0, 0.0],
                end: [2.0, 0.0],
            },
            halfplanes: vec![Halfplane {
                normal: [1.0, 0.0],
                offset: 2.0,
            }],
            w: 1.0,
        }
    }

    #[test]
    fn localization_constraint_at_identity() {
        let a = unit_box_agent();
        let z = [0.0, 0.0, 1.0, 0.0, 1.0];
        assert_eq!(a.constraints(&z), vec![-1.0]);
        // −log det gradient at Q = I is −I: packed (−1, 0, −1)
        let g = a.gradient(&z);
        assert_eq!(&g[2..], &[-1.0, 0.0, -1.0]);
        // q on its segment: no distance pull
        assert_eq!(&g[..2], &[0.0, 0.0]);
    }

    #[test]
    fn localization_rejects_empty_halfplanes_and_indefinite_shape() {
        let err = localization2d_problem(vec![unit_box_agent().segment], vec![vec![]], 1.0).unwrap_err();
        assert_eq!(err, ProblemError::EmptyHalfplaneSet { agent: 0 });
        let a = unit_box_agent();
        assert!(matches!(
            a.check_point(&[0.0, 0.0, 1.0, 2.0, 1.0]),
            Err(ProblemError::NotPositiveDefinite { .. })
        ));
        assert!(a.check_point(&[0.0, 0.0, 1.0, 0.5, 1.0]).is_ok());
    }

    #[test]
    fn segment_projection_clamps() {
        let s = Segment {
            start: [0.0, 0.0],
            end: [1.0, 0.0],
        };
        assert_eq!(s.project([0.5, 2.0]), [0.5, 0.0]);
        assert_eq!(s.project([-3.0, 1.0]), [0.0, 0.0]);
        assert_eq!(s.project([4.0, -1.0]), [1.0, 0.0]);
    }
}
