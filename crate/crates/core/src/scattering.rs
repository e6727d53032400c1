//! Wave-variable (scattering) channel between two neighboring agents.
//!
//! Each agent `i` turns its controller port `(v_ij, r_ij)` into an outgoing
//! wave, and recovers `r_ij` from the wave it receives from `j`. The two
//! endpoints of an edge use mirrored formulas, selected by id order:
//!
//! | endpoint | sends                        | receives                      |
//! |----------|------------------------------|-------------------------------|
//! | higher id | `s→ = (−v + ηr)/√(2η)`      | `s← = (−v − ηr)/√(2η)`        |
//! | lower id  | `s→ = ( v − ηr)/√(2η)`      | `s← = ( v + ηr)/√(2η)`        |
//!
//! With `v = E(r − [x_i; ξ_i])`, the receive relation is solved for `r`:
//!
//! - lower id: `r = (I + E/η)⁻¹ (√(2/η) s← + E[x;ξ]/η)`
//! - higher id: `r = −(I + E/η)⁻¹ (√(2/η) s← − E[x;ξ]/η)`
//!
//! Both sides only ever need `(I + E/η)⁻¹`, whose 2×2 block has determinant
//! `1 + a/η + b²/η² > 0`, so decoding is defined for every positive gain set.
//!
//! Every map here is `B ⊗ I_N` for a 2×2 block `B`; all algebra is done on
//! the block and lifted.

use std::fmt;

use crate::linalg::{dot, norm_sq, Mat2};

#[derive(Debug, Clone, PartialEq)]
pub enum ScatteringError {
    InvalidImpedance { eta: f64 },
    NegativeDelay { delay: f64 },
    SingularScatteringMatrix,
    RoleMismatch { agent: usize, lo: usize, hi: usize },
    DimensionMismatch { expected: usize, got: usize },
}

impl fmt::Display for ScatteringError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScatteringError::InvalidImpedance { eta } => {
                write!(f, "wave impedance must be positive and finite, got {eta}")
            }
            ScatteringError::NegativeDelay { delay } => write!(f, "negative delay {delay}"),
            ScatteringError::SingularScatteringMatrix => {
                write!(f, "scattering matrix I + E/η is singular")
            }
            ScatteringError::RoleMismatch { agent, lo, hi } => {
                write!(f, "agent {agent} is not an endpoint of link ({lo}, {hi})")
            }
            ScatteringError::DimensionMismatch { expected, got } => {
                write!(f, "wave dimension mismatch: expected {expected}, got {got}")
            }
        }
    }
}

impl std::error::Error for ScatteringError {}

/// Which formula an endpoint uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Lower id of the pair.
    Lower,
    /// Higher id of the pair.
    Upper,
}

/// Role of `agent` when talking to `peer`.
pub fn role_of(agent: usize, peer: usize) -> Role {
    if agent < peer {
        Role::Lower
    } else {
        Role::Upper
    }
}

/// The 2×2 block of `E_ij = [[a I, −b I], [b I, 0]]`.
pub fn controller_block(a: f64, b: f64) -> Mat2 {
    Mat2([[a, -b], [b, 0.0]])
}

/// Per-edge scattering state: gains, impedance, delays and the cached inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringLink {
    pub lo: usize,
    pub hi: usize,
    pub a: f64,
    pub b: f64,
    pub eta: f64,
    /// Transport delay of waves sent by `lo` (seconds).
    pub delay_from_lo: f64,
    /// Transport delay of waves sent by `hi` (seconds).
    pub delay_from_hi: f64,
    e: Mat2,
    inv_plus: Mat2,
}

impl ScatteringLink {
    pub fn new(
        i: usize,
        j: usize,
        a: f64,
        b: f64,
        eta: f64,
        delay_from_lo: f64,
        delay_from_hi: f64,
    ) -> Result<Self, ScatteringError> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(ScatteringError::InvalidImpedance { eta });
        }
        for delay in [delay_from_lo, delay_from_hi] {
            if !(delay >= 0.0) {
                return Err(ScatteringError::NegativeDelay { delay });
            }
        }
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let e = controller_block(a, b);
        let inv_plus = Mat2::IDENTITY
            .add(&e.scale(1.0 / eta))
            .inverse()
            .ok_or(ScatteringError::SingularScatteringMatrix)?;
        Ok(ScatteringLink {
            lo,
            hi,
            a,
            b,
            eta,
            delay_from_lo,
            delay_from_hi,
            e,
            inv_plus,
        })
    }

    pub fn e_block(&self) -> Mat2 {
        self.e
    }

    /// `(I + E/η)⁻¹` block.
    pub fn inv_plus_block(&self) -> Mat2 {
        self.inv_plus
    }

    fn role(&self, agent: usize) -> Result<Role, ScatteringError> {
        if agent == self.lo {
            Ok(Role::Lower)
        } else if agent == self.hi {
            Ok(Role::Upper)
        } else {
            Err(ScatteringError::RoleMismatch {
                agent,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }

    pub fn peer(&self, agent: usize) -> usize {
        if agent == self.lo {
            self.hi
        } else {
            self.lo
        }
    }
}

/// A wave in flight from `sender` to `receiver`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveMessage {
    pub s: Vec<f64>,
    pub sender: usize,
    pub receiver: usize,
    pub send_time: f64,
}

/// Outgoing wave of `sender` given its port `(v, r)`.
pub fn encode(
    link: &ScatteringLink,
    sender: usize,
    v: &[f64],
    r: &[f64],
    send_time: f64,
) -> Result<WaveMessage, ScatteringError> {
    let role = link.role(sender)?;
    if v.len() != r.len() {
        return Err(ScatteringError::DimensionMismatch {
            expected: v.len(),
            got: r.len(),
        });
    }
    let eta = link.eta;
    let c = 1.0 / (2.0 * eta).sqrt();
    let s = v
        .iter()
        .zip(r)
        .map(|(&vk, &rk)| match role {
            Role::Upper => c * (-vk + eta * rk),
            Role::Lower => c * (vk - eta * rk),
        })
        .collect();
    Ok(WaveMessage {
        s,
        sender,
        receiver: link.peer(sender),
        send_time,
    })
}

/// Recovers `r_ij` at `receiver` from the incoming wave and its own `[x_i; ξ_i]`.
pub fn decode(
    link: &ScatteringLink,
    receiver: usize,
    s_in: &[f64],
    x_i: &[f64],
    xi_i: &[f64],
) -> Result<Vec<f64>, ScatteringError> {
    let role = link.role(receiver)?;
    let n = x_i.len();
    if s_in.len() != 2 * n || xi_i.len() != n {
        return Err(ScatteringError::DimensionMismatch {
            expected: 2 * n,
            got: s_in.len(),
        });
    }
    let mut port = x_i.to_vec();
    port.extend_from_slice(xi_i);
    let ex = link.e.apply_lifted(&port);
    let k = (2.0 / link.eta).sqrt();
    let inv_eta = 1.0 / link.eta;
    let rhs: Vec<f64> = s_in
        .iter()
        .zip(&ex)
        .map(|(&s, &e)| match role {
            Role::Lower => k * s + inv_eta * e,
            Role::Upper => -(k * s - inv_eta * e),
        })
        .collect();
    Ok(link.inv_plus.apply_lifted(&rhs))
}

/// `½(‖s_out‖² − ‖s_in‖²) + vᵀr`; zero (to roundoff) for a consistently wired port.
pub fn power_balance(s_out: &[f64], s_in: &[f64], v: &[f64], r: &[f64]) -> f64 {
    0.5 * (norm_sq(s_out) - norm_sq(s_in)) + dot(v, r)
}

/// The incoming wave that the port `(v, r)` of `agent` is consistent with.
pub fn consistent_incoming(link: &ScatteringLink, agent: usize, v: &[f64], r: &[f64]) -> Result<Vec<f64>, ScatteringError> {
    let role = link.role(agent)?;
    let eta = link.eta;
    let c = 1.0 / (2.0 * eta).sqrt();
    Ok(v.iter()
        .zip(r)
        .map(|(&vk, &rk)| match role {
            Role::Upper => c * (-vk - eta * rk),
            Role::Lower => c * (vk + eta * rk),
        })
        .collect())
}

/// `Ē = (E + ηI)⁻¹(E − ηI)` block.
pub fn ebar_block(a: f64, b: f64, eta: f64) -> Option<Mat2> {
    let e = controller_block(a, b);
    let plus = e.add(&Mat2::IDENTITY.scale(eta));
    let minus = e.add(&Mat2::IDENTITY.scale(-eta));
    Some(plus.inverse()?.mul(&minus))
}

/// Spectral radius of `Ē²`; the lift by `I_N` leaves the spectrum unchanged.
pub fn ebar_spectral_radius(a: f64, b: f64, eta: f64, _dim: usize) -> f64 {
    match ebar_block(a, b, eta) {
        Some(eb) => eb.mul(&eb).spectral_radius(),
        None => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::controller_output;

    fn link(a: f64, b: f64, eta: f64) -> ScatteringLink {
        ScatteringLink::new(0, 1, a, b, eta, 0.0, 0.0).unwrap()
    }

    #[test]
    fn zero_port_gives_zero_wave() {
        let l = link(1.0, 3.0, 1.0);
        assert_eq!(encode(&l, 0, &[0.0, 0.0], &[0.0, 0.0], 0.0).unwrap().s, vec![0.0, 0.0]);
        assert_eq!(decode(&l, 1, &[0.0, 0.0], &[0.0], &[0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn encode_reference_value() {
        // η = 2 ⇒ √(2η) = 2; the (−v + ηr) endpoint is the higher id
        let l = link(1.0, 3.0, 2.0);
        let m = encode(&l, 1, &[1.0, 0.0], &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(m.s, vec![-0.5, 0.0]);
        assert_eq!(m.receiver, 0);
    }

    #[test]
    fn roles_are_negatives_of_each_other() {
        let l = link(1.0, 3.0, 1.5);
        let v = [0.3, -1.0, 2.0, 0.1];
        let r = [1.1, 0.4, -0.7, 0.0];
        let up = encode(&l, 1, &v, &r, 0.0).unwrap().s;
        let down = encode(&l, 0, &v, &r, 0.0).unwrap().s;
        for (a, b) in up.iter().zip(&down) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn foreign_agent_is_rejected() {
        let l = link(1.0, 1.0, 1.0);
        assert!(matches!(
            encode(&l, 5, &[0.0, 0.0], &[0.0, 0.0], 0.0),
            Err(ScatteringError::RoleMismatch { agent: 5, .. })
        ));
        assert!(matches!(
            ScatteringLink::new(0, 1, 1.0, 1.0, 0.0, 0.0, 0.0),
            Err(ScatteringError::InvalidImpedance { .. })
        ));
    }

    #[test]
    fn cached_inverse_matches_hand_inverse() {
        // a = 1, b = 3, η = 1: I + E = [[2, −3], [3, 1]], det 11
        let l = link(1.0, 3.0, 1.0);
        let inv = l.inv_plus_block();
        let hand = [[1.0 / 11.0, 3.0 / 11.0], [-3.0 / 11.0, 2.0 / 11.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((inv.0[i][j] - hand[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn decode_inverts_receive_relation_for_both_roles() {
        let l = link(1.3, 0.7, 0.8);
        let x = [0.2, -0.4];
        let xi = [1.0, 0.5];
        let r = [0.9, 0.1, -0.3, 2.0];
        for agent in [0, 1] {
            let v = controller_output(l.a, l.b, &x, &xi, &r);
            let s_in = consistent_incoming(&l, agent, &v, &r).unwrap();
            let back = decode(&l, agent, &s_in, &x, &xi).unwrap();
            for (a, b) in back.iter().zip(&r) {
                assert!((a - b).abs() < 1e-13, "agent {agent}: {back:?} vs {r:?}");
            }
        }
    }

    // The listing's higher-id receive rule, −(I − E/η)⁻¹(√(2/η)s + E[x;ξ]/η),
    // taken literally. It does not invert the higher-id receive relation.
    fn listing_upper_decode(l: &ScatteringLink, s_in: &[f64], x: &[f64], xi: &[f64]) -> Vec<f64> {
        let mut port = x.to_vec();
        port.extend_from_slice(xi);
        let ex = l.e_block().apply_lifted(&port);
        let k = (2.0 / l.eta).sqrt();
        let rhs: Vec<f64> = s_in.iter().zip(&ex).map(|(s, e)| k * s + e / l.eta).collect();
        let inv_minus = Mat2::IDENTITY.add(&l.e_block().scale(-1.0 / l.eta)).inverse().unwrap();
        inv_minus.apply_lifted(&rhs).iter().map(|v| -v).collect()
    }

    #[test]
    fn literal_listing_upper_rule_is_inconsistent() {
        let l = link(1.0, 3.0, 1.0);
        let x = [0.5];
        let xi = [-0.2];
        let r = [1.0, 0.3];
        let v = controller_output(l.a, l.b, &x, &xi, &r);
        let s_in = consistent_incoming(&l, 1, &v, &r).unwrap();
        let literal = listing_upper_decode(&l, &s_in, &x, &xi);
        let err: f64 = literal.iter().zip(&r).map(|(a, b)| (a - b).abs()).sum();
        assert!(err > 1e-3, "literal rule unexpectedly consistent: {literal:?}");
        let ours = decode(&l, 1, &s_in, &x, &xi).unwrap();
        assert!(ours.iter().zip(&r).all(|(a, b)| (a - b).abs() < 1e-13));
    }

    #[test]
    fn power_balance_of_r_only_wave() {
        let l = link(1.0, 3.0, 2.0);
        let r = [0.7, -0.1];
        let v = [0.0, 0.0];
        let s_out = encode(&l, 1, &v, &r, 0.0).unwrap().s;
        let s_in = consistent_incoming(&l, 1, &v, &r).unwrap();
        assert_eq!(s_out, s_in.iter().map(|s| -s).collect::<Vec<_>>());
        assert!(power_balance(&s_out, &s_in, &v, &r).abs() < 1e-15);
    }

    #[test]
    fn mismatched_impedance_breaks_balance() {
        let l = link(1.0, 3.0, 1.0);
        let wrong = link(1.0, 3.0, 4.0);
        let v = [0.4, -1.0];
        let r = [1.0, 0.5];
        let s_out = encode(&l, 0, &v, &r, 0.0).unwrap().s;
        let s_in = consistent_incoming(&wrong, 0, &v, &r).unwrap();
        assert!(power_balance(&s_out, &s_in, &v, &r).abs() > 1e-3);
    }

    #[test]
    fn ebar_contracts_for_experiment_gains() {
        assert!(ebar_spectral_radius(1.0, 3.0, 1.0, 1) < 1.0);
        assert!(ebar_spectral_radius(1.0, 1.0, 1.0, 3) < 1.0);
        // independent route: dense 2N×2N eigenvalues
        let (a, b, eta, n) = (1.0, 3.0, 1.0, 2);
        let e = controller_block(a, b).lifted(n);
        let id = nalgebra::DMatrix::<f64>::identity(2 * n, 2 * n);
        let ebar = (&e + &id * eta).try_inverse().unwrap() * (&e - &id * eta);
        let dense = crate::linalg::spectral_radius(&(&ebar * &ebar));
        assert!((dense - ebar_spectral_radius(a, b, eta, n)).abs() < 1e-12);
    }
}
