//! Centralized reference solutions, computed without any of the distributed
//! machinery, so simulated end states can be checked against them.
//!
//! * Unconstrained problems use a damped Newton method on `Σ f_i`.
//! * Constrained problems use a log-barrier path started from the Slater
//!   point. An active-set Newton polish then drives the KKT residual to
//!   roundoff.
//!
//! The integrator equilibrium is the minimal-norm solution of
//! `L̄_I ξ* = α(φ(1⊗z*) + Γ(1⊗z*)λ*)`. Any `1⊗c` can be added to it;
//! [`shift_to_mean`] picks the representative a run actually reaches.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::graph::{kron_lift, LaplacianKind, NetworkGraph};
use crate::linalg::{norm, symmetric_pinv};
use crate::problem::{global_gradient, kkt_residual, KktResidual, ProblemInstance};

const GRAD_TOL: f64 = 1e-11;
const MAX_NEWTON: usize = 200;
const IMAGE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    NoConvergence { method: &'static str, residual: f64 },
    MissingSlaterPoint,
    SlaterViolated { value: f64 },
    NotInImage { residual: f64 },
    Unconstrained,
    DimensionMismatch { expected: usize, got: usize },
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::NoConvergence { method, residual } => {
                write!(f, "{method} did not converge (residual {residual:e})")
            }
            OracleError::MissingSlaterPoint => {
                write!(f, "constrained problem has no strictly feasible starting point")
            }
            OracleError::SlaterViolated { value } => {
                write!(f, "starting point is not strictly feasible (max g = {value})")
            }
            OracleError::NotInImage { residual } => write!(
                f,
                "α(φ+Γλ) is not in the range of the integral Laplacian (residual {residual:e})"
            ),
            OracleError::Unconstrained => write!(f, "problem has no constraints"),
            OracleError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
        }
    }
}

impl std::error::Error for OracleError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub z_star: Vec<f64>,
    /// Stacked per-agent multipliers (empty when unconstrained).
    pub lambda_star: Vec<f64>,
    /// Minimal-norm integrator equilibrium, stacked per agent.
    pub xi_star: Vec<f64>,
    pub kkt: KktResidual,
    pub achieved_residual: f64,
    pub method: String,
}

/// Solves whichever kind of problem `p` is.
pub fn solve(p: &ProblemInstance, g: &NetworkGraph, alpha: f64) -> Result<OracleSolution, OracleError> {
    if p.is_constrained() {
        solve_constrained(p, g, alpha)
    } else {
        solve_unconstrained(p, g, alpha)
    }
}

fn starting_point(p: &ProblemInstance) -> Vec<f64> {
    if let Some(s) = p.slater_point() {
        return s.to_vec();
    }
    let zero = vec![0.0; p.dim()];
    if p.agents().all(|a| a.domain_margin(&zero).map_or(true, |m| m > 0.0)) {
        return zero;
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    p.agent(0).sample_initial(&mut rng)
}

fn in_domain(p: &ProblemInstance, z: &[f64]) -> bool {
    z.iter().all(|v| v.is_finite()) && p.agents().all(|a| a.domain_margin(z).map_or(true, |m| m > 0.0))
}

// Least-squares solve, robust to a singular (or nearly singular) system.
fn lstsq(a: DMatrix<f64>, b: DVector<f64>) -> DVector<f64> {
    if let Some(chol) = a.clone().cholesky() {
        return chol.solve(&b);
    }
    let svd = a.svd(true, true);
    let tol = 1e-13 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(&b, tol).unwrap_or_else(|_| DVector::zeros(b.len()))
}

fn total_hessian(p: &ProblemInstance, z: &[f64]) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(p.dim(), p.dim());
    for a in p.agents() {
        h += a.hessian(z);
    }
    h
}

/// Minimizer of `Σ_i f_i` by damped Newton with backtracking.
pub fn minimize_unconstrained(p: &ProblemInstance) -> Result<Vec<f64>, OracleError> {
    let mut z = starting_point(p);
    let mut f = p.total_cost(&z);
    for _ in 0..MAX_NEWTON {
        let grad = global_gradient(p, &z);
        if norm(&grad) <= GRAD_TOL * (1.0 + f.abs()) {
            return Ok(z);
        }
        let step = lstsq(total_hessian(p, &z), -DVector::from_vec(grad.clone()));
        let slope: f64 = grad.iter().zip(step.iter()).map(|(g, s)| g * s).sum();
        let dir: Vec<f64> = if slope < 0.0 {
            step.iter().copied().collect()
        } else {
            grad.iter().map(|g| -g).collect()
        };
        let slope: f64 = grad.iter().zip(&dir).map(|(g, s)| g * s).sum();
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            if in_domain(p, &cand) {
                let fc = p.total_cost(&cand);
                if fc <= f + 1e-4 * t * slope || t < 1e-12 {
                    z = cand;
                    f = fc;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-16 {
                return Err(OracleError::NoConvergence {
                    method: "damped Newton",
                    residual: norm(&grad),
                });
            }
        }
    }
    let residual = norm(&global_gradient(p, &z));
    if residual <= 1e-9 {
        Ok(z)
    } else {
        Err(OracleError::NoConvergence {
            method: "damped Newton",
            residual,
        })
    }
}

pub fn solve_unconstrained(
    p: &ProblemInstance,
    g: &NetworkGraph,
    alpha: f64,
) -> Result<OracleSolution, OracleError> {
    let z = minimize_unconstrained(p)?;
    finish(p, g, alpha, z, Vec::new(), "damped-newton")
}

fn barrier_objective(p: &ProblemInstance, z: &[f64], mu: f64) -> Option<f64> {
    if !in_domain(p, z) {
        return None;
    }
    let mut f = p.total_cost(z);
    for gv in p.all_constraints(z) {
        if gv >= 0.0 {
            return None;
        }
        f -= mu * (-gv).ln();
    }
    Some(f)
}

// Gradient and Hessian of F(z) − μ Σ ln(−g_l(z)).
fn barrier_derivatives(p: &ProblemInstance, z: &[f64], mu: f64) -> (Vec<f64>, DMatrix<f64>) {
    let mut grad = global_gradient(p, z);
    let mut hess = total_hessian(p, z);
    for a in p.agents() {
        let gv = a.constraints(z);
        let jac = a.constraint_jacobian(z);
        for (l, (&gl, col)) in gv.iter().zip(&jac).enumerate() {
            let w = mu / (-gl);
            let c = DVector::from_column_slice(col);
            for (acc, v) in grad.iter_mut().zip(col) {
                *acc += w * v;
            }
            hess += (&c * c.transpose()) * (w / (-gl)) + a.constraint_hessian(z, l) * w;
        }
    }
    (grad, hess)
}

fn barrier_center(p: &ProblemInstance, z: &mut Vec<f64>, mu: f64) -> Result<(), OracleError> {
    let mut f = barrier_objective(p, z, mu).expect("iterate stays strictly feasible");
    for _ in 0..MAX_NEWTON {
        let (grad, hess) = barrier_derivatives(p, z, mu);
        let step = lstsq(hess, -DVector::from_vec(grad.clone()));
        let slope: f64 = grad.iter().zip(step.iter()).map(|(g, s)| g * s).sum();
        if -slope / 2.0 <= 1e-14 * (1.0 + f.abs()) {
            return Ok(());
        }
        let dir: Vec<f64> = if slope < 0.0 {
            step.iter().copied().collect()
        } else {
            grad.iter().map(|g| -g).collect()
        };
        let slope: f64 = grad.iter().zip(&dir).map(|(g, s)| g * s).sum();
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            if let Some(fc) = barrier_objective(p, &cand, mu) {
                if fc <= f + 1e-4 * t * slope {
                    *z = cand;
                    f = fc;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-14 {
                // no further decrease is representable; the center is as good as it gets
                return Ok(());
            }
        }
    }
    Ok(())
}

fn barrier_multipliers(p: &ProblemInstance, z: &[f64], mu: f64) -> Vec<f64> {
    p.all_constraints(z).iter().map(|g| mu / (-g)).collect()
}

// Newton on the equality-constrained KKT system of the active set.
fn active_set_polish(p: &ProblemInstance, z0: &[f64], lambda0: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let dim = p.dim();
    let g0 = p.all_constraints(z0);
    let scale = lambda0.iter().fold(1.0_f64, |m, l| m.max(*l));
    let active: Vec<usize> = (0..g0.len())
        .filter(|&l| lambda0[l] > 1e-6 * scale || g0[l] > -1e-7)
        .collect();
    let mut z = z0.to_vec();
    let mut lambda: Vec<f64> = lambda0
        .iter()
        .enumerate()
        .map(|(l, &v)| if active.contains(&l) { v } else { 0.0 })
        .collect();
    let offsets = p.constraint_offsets();
    for _ in 0..50 {
        let mut hess = total_hessian(p, &z);
        let mut stat = global_gradient(p, &z);
        let mut cols = Vec::with_capacity(active.len());
        let gv = p.all_constraints(&z);
        for i in 0..p.n() {
            let jac = p.agent(i).constraint_jacobian(&z);
            for (k, col) in jac.iter().enumerate() {
                let l = offsets[i] + k;
                if lambda[l] != 0.0 {
                    hess += p.agent(i).constraint_hessian(&z, k) * lambda[l];
                    for (s, c) in stat.iter_mut().zip(col) {
                        *s += lambda[l] * c;
                    }
                }
                if active.contains(&l) {
                    cols.push(col.clone());
                }
            }
        }
        let na = active.len();
        let mut kkt = DMatrix::zeros(dim + na, dim + na);
        kkt.view_mut((0, 0), (dim, dim)).copy_from(&hess);
        for (c, col) in cols.iter().enumerate() {
            for r in 0..dim {
                kkt[(r, dim + c)] = col[r];
                kkt[(dim + c, r)] = col[r];
            }
        }
        let mut rhs = DVector::zeros(dim + na);
        for r in 0..dim {
            rhs[r] = -stat[r];
        }
        for (c, &l) in active.iter().enumerate() {
            rhs[dim + c] = -gv[l];
        }
        let res = rhs.norm();
        if res <= 1e-14 {
            break;
        }
        let svd = kkt.svd(true, true);
        let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
        let step = svd.solve(&rhs, tol).ok()?;
        for r in 0..dim {
            z[r] += step[r];
        }
        for (c, &l) in active.iter().enumerate() {
            lambda[l] += step[dim + c];
        }
        if !in_domain(p, &z) {
            return None;
        }
        if step.norm() <= 1e-15 * (1.0 + norm(&z)) {
            break;
        }
    }
    if lambda.iter().any(|&l| l < 0.0) {
        return None;
    }
    Some((z, lambda))
}

/// KKT pair `(z*, λ*)` of `min Σ f_i(z)` s.t. `g_i(z) ≤ 0` for all `i`.
pub fn minimize_constrained(p: &ProblemInstance) -> Result<(Vec<f64>, Vec<f64>, &'static str), OracleError> {
    if !p.is_constrained() {
        return Err(OracleError::Unconstrained);
    }
    let mut z = p.slater_point().ok_or(OracleError::MissingSlaterPoint)?.to_vec();
    let worst = p.all_constraints(&z).into_iter().fold(f64::NEG_INFINITY, f64::max);
    if worst >= 0.0 {
        return Err(OracleError::SlaterViolated { value: worst });
    }
    let mut mu = 1.0;
    while mu > 1e-12 {
        barrier_center(p, &mut z, mu)?;
        mu *= 0.1;
    }
    let mu = mu * 10.0;
    let lambda = barrier_multipliers(p, &z, mu);
    let base = kkt_residual(p, &z, &lambda)
        .expect("consistent dimensions")
        .max_component();
    if let Some((zp, lp)) = active_set_polish(p, &z, &lambda) {
        let polished = kkt_residual(p, &zp, &lp).expect("consistent dimensions").max_component();
        if polished < base {
            return Ok((zp, lp, "barrier+active-set"));
        }
    }
    if base <= 1e-6 {
        Ok((z, lambda, "barrier"))
    } else {
        Err(OracleError::NoConvergence {
            method: "barrier",
            residual: base,
        })
    }
}

pub fn solve_constrained(
    p: &ProblemInstance,
    g: &NetworkGraph,
    alpha: f64,
) -> Result<OracleSolution, OracleError> {
    let (z, lambda, method) = minimize_constrained(p)?;
    finish(p, g, alpha, z, lambda, method)
}

fn finish(
    p: &ProblemInstance,
    g: &NetworkGraph,
    alpha: f64,
    z: Vec<f64>,
    lambda: Vec<f64>,
    method: &str,
) -> Result<OracleSolution, OracleError> {
    let xi = equilibrium_xi(p, g, alpha, &z, &lambda)?;
    let kkt = kkt_residual(p, &z, &lambda).expect("consistent dimensions");
    Ok(OracleSolution {
        achieved_residual: kkt.max_component(),
        kkt,
        z_star: z,
        lambda_star: lambda,
        xi_star: xi,
        method: method.to_string(),
    })
}

/// Minimal-norm `ξ*` with `(L_I ⊗ I) ξ* = α(φ(1⊗z) + Γ(1⊗z)λ)`.
pub fn equilibrium_xi(
    p: &ProblemInstance,
    g: &NetworkGraph,
    alpha: f64,
    z: &[f64],
    lambda: &[f64],
) -> Result<Vec<f64>, OracleError> {
    let dim = p.dim();
    if lambda.len() != p.total_constraints() {
        return Err(OracleError::DimensionMismatch {
            expected: p.total_constraints(),
            got: lambda.len(),
        });
    }
    let off = p.constraint_offsets();
    let mut target = Vec::with_capacity(p.n() * dim);
    for i in 0..p.n() {
        let mut gi = p.agent(i).gradient(z);
        if off[i + 1] > off[i] {
            for (a, b) in gi.iter_mut().zip(p.jacobian_times(i, z, &lambda[off[i]..off[i + 1]])) {
                *a += b;
            }
        }
        target.extend(gi.into_iter().map(|v| alpha * v));
    }
    let lifted = kron_lift(&g.laplacian(LaplacianKind::I), dim);
    let rhs = DVector::from_vec(target);
    let xi = symmetric_pinv(&lifted, 1e-10) * &rhs;
    let residual = (&lifted * &xi - &rhs).norm();
    if residual > IMAGE_TOL * (1.0 + rhs.norm()) {
        return Err(OracleError::NotInImage { residual });
    }
    Ok(xi.iter().copied().collect())
}

/// Adds the `1 ⊗ c` that gives `xi` the same per-coordinate agent mean as
/// `reference` (the integral dynamics conserve that mean).
pub fn shift_to_mean(xi: &[f64], reference: &[f64], dim: usize) -> Vec<f64> {
    let n = xi.len() / dim;
    let mut out = xi.to_vec();
    for k in 0..dim {
        let mean_xi: f64 = (0..n).map(|i| xi[i * dim + k]).sum::<f64>() / n as f64;
        let mean_ref: f64 = (0..n).map(|i| reference[i * dim + k]).sum::<f64>() / n as f64;
        for i in 0..n {
            out[i * dim + k] += mean_ref - mean_xi;
        }
    }
    out
}

/// `L(z, λ) = Σ f_i(z) + λᵀ g(z)`.
pub fn lagrangian(p: &ProblemInstance, z: &[f64], lambda: &[f64]) -> f64 {
    p.total_cost(z)
        + p.all_constraints(z)
            .iter()
            .zip(lambda)
            .map(|(g, l)| g * l)
            .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{
        constrained_quadratic_problem, localization2d_problem, partial_quadratic_problem,
        quadratic_problem, Halfplane, LinearConstraint, Segment,
    };

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn ring_quadratic_optimum_is_target_mean() {
        let g = NetworkGraph::ring(5, 1.0, 3.0).unwrap();
        let p = quadratic_problem(1, (0..5).map(|k| vec![k as f64]).collect(), None).unwrap();
        let s = solve_unconstrained(&p, &g, 2.0).unwrap();
        assert!((s.z_star[0] - 2.0).abs() < 1e-12);
        // integral equilibrium has zero mean and satisfies the defining equation
        assert!(s.xi_star.iter().sum::<f64>().abs() < 1e-10);
        let l = g.laplacian(LaplacianKind::I).entries;
        let lx = &l * DVector::from_vec(s.xi_star.clone());
        for i in 0..5 {
            assert!((lx[i] - 2.0 * (2.0 - i as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn two_agent_path_xi_matches_hand_solution() {
        // f_1 = ½(z−1)², f_2 = ½(z+1)², z* = 0, φ = (−1, 1), α = 1, b = 1:
        // [[1,−1],[−1,1]] ξ = (−1, 1) ⇒ ξ* = (−0.5, 0.5).
        let g = NetworkGraph::path(2, 1.0, 1.0).unwrap();
        let p = quadratic_problem(1, vec![vec![1.0], vec![-1.0]], None).unwrap();
        let s = solve(&p, &g, 1.0).unwrap();
        assert!(s.z_star[0].abs() < 1e-12);
        assert!(close(&s.xi_star, &[-0.5, 0.5], 1e-12));
    }

    #[test]
    fn partial_quadratic_optimum_collects_owned_coordinates() {
        let g = NetworkGraph::ring(3, 1.0, 3.0).unwrap();
        let p = partial_quadratic_problem(3, vec![0, 1, 2], vec![0.5, -1.0, 2.0]).unwrap();
        let s = solve(&p, &g, 2.0).unwrap();
        assert!(close(&s.z_star, &[0.5, -1.0, 2.0], 1e-10));
    }

    #[test]
    fn one_dimensional_constraint_becomes_active() {
        // min ½(z−2)² + ½(z−4)² s.t. z ≤ 1: z* = 1, λ* = 4 carried by the constrained agent.
        let g = NetworkGraph::path(2, 1.0, 1.0).unwrap();
        let p = constrained_quadratic_problem(
            1,
            vec![vec![2.0], vec![4.0]],
            None,
            vec![vec![LinearConstraint { a: vec![1.0], b: 1.0 }], vec![]],
            vec![0.0],
        )
        .unwrap();
        let s = solve(&p, &g, 1.0).unwrap();
        assert!((s.z_star[0] - 1.0).abs() < 1e-10, "{:?}", s);
        assert!((s.lambda_star[0] - 4.0).abs() < 1e-8);
        assert!(s.achieved_residual < 1e-9);
    }

    #[test]
    fn inactive_constraint_has_zero_multiplier() {
        let g = NetworkGraph::path(2, 1.0, 1.0).unwrap();
        let p = constrained_quadratic_problem(
            1,
            vec![vec![0.0], vec![1.0]],
            None,
            vec![vec![LinearConstraint { a: vec![1.0], b: 5.0 }], vec![]],
            vec![0.0],
        )
        .unwrap();
        let s = solve(&p, &g, 1.0).unwrap();
        assert!((s.z_star[0] - 0.5).abs() < 1e-9);
        assert!(s.lambda_star[0].abs() < 1e-9);
    }

    #[test]
    fn localization_oracle_satisfies_kkt() {
        let seg = |start: [f64; 2], end: [f64; 2]| Segment { start, end };
        let hp = |normal: [f64; 2], offset: f64| Halfplane { normal, offset };
        let p = localization2d_problem(
            vec![seg([0.0, 1.0], [2.0, 1.0]), seg([1.0, 0.0], [1.0, 2.0])],
            vec![vec![hp([1.0, 0.0], 2.0), hp([-1.0, 0.0], 0.0)], vec![hp([0.0, 1.0], 2.0), hp([0.0, -1.0], 0.0)]],
            1.0,
        )
        .unwrap()
        .with_slater_point(vec![1.0, 1.0, 0.5, 0.0, 0.5])
        .unwrap();
        let g = NetworkGraph::path(2, 1.0, 1.0).unwrap();
        let s = solve(&p, &g, 1.0).unwrap();
        assert!(s.achieved_residual < 1e-6, "{s:?}");
        assert!(crate::problem::shape_min_eig(&s.z_star) > 0.0);
    }

    #[test]
    fn missing_slater_point_is_reported() {
        let p = constrained_quadratic_problem(
            1,
            vec![vec![0.0]],
            None,
            vec![vec![LinearConstraint { a: vec![1.0], b: 1.0 }]],
            vec![0.0],
        )
        .unwrap();
        // rebuild without the point
        let bare = ProblemInstance::new("constrained-quadratic", vec![std::sync::Arc::new(
            crate::problem::QuadraticCost {
                target: vec![0.0],
                weight: DMatrix::identity(1, 1),
                constraint_rows: vec![vec![1.0]],
                constraint_rhs: vec![1.0],
            },
        )])
        .unwrap();
        assert!(p.slater_point().is_some());
        assert_eq!(minimize_constrained(&bare).unwrap_err(), OracleError::MissingSlaterPoint);
    }

    #[test]
    fn kernel_shift_restores_mean() {
        let xi = vec![1.0, -1.0, 2.0, -2.0];
        let reference = vec![0.5, 0.0, 0.5, 0.0];
        let s = shift_to_mean(&xi, &reference, 2);
        assert!(close(&s, &[0.0, 0.5, 1.0, -0.5], 1e-15));
    }

    #[test]
    fn lagrangian_adds_weighted_constraints() {
        let p = constrained_quadratic_problem(
            1,
            vec![vec![0.0]],
            None,
            vec![vec![LinearConstraint { a: vec![1.0], b: 1.0 }]],
            vec![0.0],
        )
        .unwrap();
        // ½·4 + 3·(2−1)
        assert!((lagrangian(&p, &[2.0], &[3.0]) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn hand_solved_scalar_kkt_point() {
        // f = ½(z−2)², g = z − 1 ≤ 0: stationarity (z−2) + λ = 0 with z = 1 gives λ = 1.
        let g = NetworkGraph::new(1, &[]).unwrap();
        let p = constrained_quadratic_problem(
            1,
            vec![vec![2.0]],
            None,
            vec![vec![LinearConstraint { a: vec![1.0], b: 1.0 }]],
            vec![0.0],
        )
        .unwrap();
        let s = solve(&p, &g, 1.0).unwrap();
        assert!(close(&s.z_star, &[1.0], 1e-10), "{s:?}");
        assert!(close(&s.lambda_star, &[1.0], 1e-8));
        assert!(s.kkt.max_component() <= 1e-8);
    }

    #[test]
    fn single_agent_optimum_is_its_target() {
        let g = NetworkGraph::new(1, &[]).unwrap();
        let p = quadratic_problem(2, vec![vec![0.3, -7.0]], None).unwrap();
        let s = solve(&p, &g, 2.0).unwrap();
        assert!(close(&s.z_star, &[0.3, -7.0], 1e-12));
        assert!(close(&s.xi_star, &[0.0, 0.0], 1e-15));
    }

    #[test]
    fn weighted_quadratic_matches_closed_form() {
        // (ΣW_i)^{-1} Σ W_i c_i
        let w1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let w2 = DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 3.0]);
        let c1 = DVector::from_vec(vec![1.0, -1.0]);
        let c2 = DVector::from_vec(vec![-2.0, 4.0]);
        let expected = (&w1 + &w2).lu().solve(&(&w1 * &c1 + &w2 * &c2)).unwrap();
        let g = NetworkGraph::path(2, 1.0, 3.0).unwrap();
        let p = quadratic_problem(2, vec![c1.as_slice().to_vec(), c2.as_slice().to_vec()], Some(vec![w1, w2])).unwrap();
        let s = solve(&p, &g, 2.0).unwrap();
        assert!(close(&s.z_star, expected.as_slice(), 1e-12), "{:?} vs {expected}", s.z_star);
    }

    #[test]
    fn identical_targets_need_no_integral_action() {
        let g = NetworkGraph::ring(4, 1.0, 3.0).unwrap();
        let p = quadratic_problem(1, vec![vec![1.5]; 4], None).unwrap();
        let s = solve(&p, &g, 2.0).unwrap();
        assert!(close(&s.xi_star, &[0.0; 4], 1e-12));
    }

    #[test]
    fn two_agent_xi_for_targets_zero_and_two() {
        // c = (0, 2), a = b = α = 1: z* = 1, φ(x*) = (1, −1) and L_I ξ* = α φ(x*),
        // so the minimal-norm ξ* is (0.5, −0.5).
        let g = NetworkGraph::path(2, 1.0, 1.0).unwrap();
        let p = quadratic_problem(1, vec![vec![0.0], vec![2.0]], None).unwrap();
        let s = solve(&p, &g, 1.0).unwrap();
        assert!(close(&s.z_star, &[1.0], 1e-12));
        assert!(close(&s.xi_star, &[0.5, -0.5], 1e-12), "{:?}", s.xi_star);
        let (dx, dxi) = crate::dynamics::pi_consensus_rhs(&p, &g, 1.0, &[1.0, 1.0], &s.xi_star);
        assert!(norm(&dx) < 1e-12 && norm(&dxi) < 1e-12);
    }

    #[test]
    fn equilibrium_survives_kernel_shift() {
        let g = NetworkGraph::ring(5, 1.0, 3.0).unwrap();
        let targets: Vec<Vec<f64>> = (0..5).map(|k| vec![k as f64, (k * k) as f64 * 0.25]).collect();
        let p = quadratic_problem(2, targets, None).unwrap();
        let s = solve(&p, &g, 2.0).unwrap();
        let x: Vec<f64> = (0..5).flat_map(|_| s.z_star.clone()).collect();
        let w = [0.7, -1.3];
        let shifted: Vec<f64> = s.xi_star.iter().enumerate().map(|(k, v)| v + w[k % 2]).collect();
        for xi in [&s.xi_star, &shifted] {
            let (dx, dxi) = crate::dynamics::pi_consensus_rhs(&p, &g, 2.0, &x, xi);
            assert!(norm(&dx) < 1e-8 && norm(&dxi) < 1e-8);
        }
    }

    #[test]
    fn constrained_equilibrium_residual_is_tiny() {
        let g = NetworkGraph::ring(3, 1.0, 3.0).unwrap();
        let p = constrained_quadratic_problem(
            2,
            vec![vec![3.0, 0.0], vec![0.0, 3.0], vec![3.0, 3.0]],
            None,
            vec![
                vec![LinearConstraint { a: vec![1.0, 1.0], b: 1.5 }],
                vec![LinearConstraint { a: vec![1.0, 0.0], b: 1.0 }],
                vec![],
            ],
            vec![0.0, 0.0],
        )
        .unwrap();
        let s = solve(&p, &g, 2.0).unwrap();
        let x: Vec<f64> = (0..3).flat_map(|_| s.z_star.clone()).collect();
        let d = crate::dynamics::constrained_rhs(&p, &g, 2.0, &x, &s.xi_star, &s.lambda_star).unwrap();
        let r = norm(&d.dx).max(norm(&d.dxi)).max(norm(&d.drho));
        assert!(r <= 1e-8, "residual {r}");
    }
}
