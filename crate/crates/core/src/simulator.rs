//! Fixed-step explicit-Euler engine for the (delayed) multi-agent dynamics.
//!
//! Delays are quantized to `round(T/h)` steps. Each direction of each edge
//! owns a [`DelayLine`]. Without scattering the lines carry `[x_j; ξ_j]`
//! directly ("naive" delays). With scattering they carry wave variables,
//! and `r_ij` is decoded at the receiver.
//!
//! A link whose two directions both have zero delay forms an algebraic loop.
//! The round trip of a wave is an affine map, so the loop is closed by solving
//! for its fixed point directly. Iterating the reflections would also
//! converge, at the rate of the spectral radius of `Ē²`, but too slowly to
//! be practical.
//! Pre-history of every line is zero.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    self, consensus_gradient_rhs, constrained_rhs, delayed_agent_rhs,
    delayed_gradient_consensus_rhs, pi_consensus_rhs, AgentDerivative, AgentState, Algorithm,
    DynamicsError, Received, SwarmState,
};
use crate::graph::NetworkGraph;
use crate::linalg::{norm, sub};
use crate::problem::ProblemInstance;
use crate::scattering::{self, ScatteringError, ScatteringLink};

/// How neighbor information reaches an agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transport {
    /// Neighbor states are available instantly.
    Ideal,
    /// States are sent through the delay lines as-is.
    NaiveDelay,
    /// Waves are sent through the delay lines.
    Scattering,
}

/// Per-direction communication delays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum DelaySpec {
    /// Same delay in every direction.
    Uniform { value: f64 },
    /// One `(from lower id, from higher id)` pair per graph edge, in edge order.
    PerEdge { pairs: Vec<[f64; 2]> },
    /// Every direction drawn independently from `U[lo, hi]` with the run seed.
    Random { lo: f64, hi: f64 },
}

impl Default for DelaySpec {
    fn default() -> Self {
        DelaySpec::Uniform { value: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub h: f64,
    pub t_end: f64,
    pub alpha: f64,
    pub eta: f64,
    pub algorithm: Algorithm,
    pub scattering_enabled: bool,
    pub naive_delay_enabled: bool,
    pub delays: DelaySpec,
    pub seed: u64,
    pub q_mineig_floor: f64,
    /// Record every `record_stride`-th step (the final step is always recorded).
    pub record_stride: usize,
    /// Record per-link port and wave values (needed by the link storages).
    pub record_links: bool,
    pub blowup_threshold: f64,
    /// Negative control: the higher-id endpoint decodes with the wrong wave
    /// sign, which breaks the lossless-channel property. Never set this in a
    /// real run.
    #[doc(hidden)]
    #[serde(skip)]
    pub corrupt_decode: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            h: 1e-3,
            t_end: 50.0,
            alpha: 2.0,
            eta: 1.0,
            algorithm: Algorithm::PiConsensus,
            scattering_enabled: false,
            naive_delay_enabled: false,
            delays: DelaySpec::default(),
            seed: 0,
            q_mineig_floor: 1e-6,
            record_stride: 100,
            record_links: false,
            blowup_threshold: 1e9,
            corrupt_decode: false,
        }
    }
}

impl SimConfig {
    pub fn transport(&self) -> Transport {
        if self.scattering_enabled {
            Transport::Scattering
        } else if self.naive_delay_enabled {
            Transport::NaiveDelay
        } else {
            Transport::Ideal
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut problems = Vec::new();
        if !(self.h > 0.0 && self.h.is_finite()) {
            problems.push(format!("h must be positive, got {}", self.h));
        }
        if !(self.t_end >= self.h) {
            problems.push(format!("t_end ({}) must be at least h ({})", self.t_end, self.h));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            problems.push(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            problems.push(format!("eta must be positive, got {}", self.eta));
        }
        if self.scattering_enabled && self.naive_delay_enabled {
            problems.push("scattering and naive delays are mutually exclusive".into());
        }
        if self.scattering_enabled && self.algorithm == Algorithm::GradientConsensus {
            problems.push("scattering requires a PI-type algorithm".into());
        }
        if self.record_stride == 0 {
            problems.push("record_stride must be at least 1".into());
        }
        if !(self.q_mineig_floor > 0.0) {
            problems.push("q_mineig_floor must be positive".into());
        }
        if !(self.blowup_threshold > 0.0) {
            problems.push("blowup_threshold must be positive".into());
        }
        match &self.delays {
            DelaySpec::Uniform { value } if !(*value >= 0.0 && value.is_finite()) => {
                problems.push(format!("delay must be nonnegative, got {value}"))
            }
            DelaySpec::PerEdge { pairs } if pairs.iter().flatten().any(|d| !(*d >= 0.0)) => {
                problems.push("per-edge delays must be nonnegative".into())
            }
            DelaySpec::Random { lo, hi } if !(*lo >= 0.0 && hi >= lo && hi.is_finite()) => {
                problems.push(format!("random delay range [{lo}, {hi}] is invalid"))
            }
            _ => {}
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(problems))
        }
    }

    /// Delays in seconds per edge as `(from lower id, from higher id)`.
    pub fn resolve_delays(&self, g: &NetworkGraph) -> Result<Vec<(f64, f64)>, SimError> {
        let m = g.edges().len();
        match &self.delays {
            DelaySpec::Uniform { value } => Ok(vec![(*value, *value); m]),
            DelaySpec::PerEdge { pairs } => {
                if pairs.len() != m {
                    return Err(SimError::InvalidConfig(vec![format!(
                        "expected {m} per-edge delay pairs, got {}",
                        pairs.len()
                    )]));
                }
                Ok(pairs.iter().map(|p| (p[0], p[1])).collect())
            }
            DelaySpec::Random { lo, hi } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(1);
                Ok((0..m)
                    .map(|_| {
                        let a = lo + (hi - lo) * rng.random::<f64>();
                        let b = lo + (hi - lo) * rng.random::<f64>();
                        (a, b)
                    })
                    .collect())
            }
        }
    }

    fn steps(&self) -> usize {
        (self.t_end / self.h).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    InvalidConfig(Vec<String>),
    Dynamics(DynamicsError),
    Scattering(ScatteringError),
    StepRejectedPd { t: f64, agent: usize, min_eig: f64 },
    ZeroDelayLoop { edge: (usize, usize) },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::InvalidConfig(p) => write!(f, "invalid simulation config: {}", p.join("; ")),
            SimError::Dynamics(e) => write!(f, "{e}"),
            SimError::Scattering(e) => write!(f, "{e}"),
            SimError::StepRejectedPd { t, agent, min_eig } => write!(
                f,
                "agent {agent} left the positive-definite domain at t = {t} (min eigenvalue {min_eig})"
            ),
            SimError::ZeroDelayLoop { edge } => {
                write!(f, "zero-delay wave loop on edge {edge:?} did not settle")
            }
        }
    }
}

impl std::error::Error for SimError {}

impl From<DynamicsError> for SimError {
    fn from(e: DynamicsError) -> Self {
        SimError::Dynamics(e)
    }
}

impl From<ScatteringError> for SimError {
    fn from(e: ScatteringError) -> Self {
        SimError::Scattering(e)
    }
}

/// Fixed-delay transport of `R^dim` samples on the step grid.
///
/// `read(k)` returns what was written at step `k − delay_steps`, or zeros
/// before the first such write. With `delay_steps = 0` a write at `k` is
/// visible to a read at `k`.
#[derive(Debug, Clone)]
pub struct DelayLine {
    delay_steps: usize,
    slots: Vec<Vec<f64>>,
    written: Vec<Option<usize>>,
    zero: Vec<f64>,
}

impl DelayLine {
    pub fn new(delay_steps: usize, dim: usize) -> Self {
        DelayLine {
            delay_steps,
            slots: vec![vec![0.0; dim]; delay_steps + 1],
            written: vec![None; delay_steps + 1],
            zero: vec![0.0; dim],
        }
    }

    /// Line with `round(delay / h)` steps.
    pub fn with_delay(delay: f64, h: f64, dim: usize) -> Self {
        Self::new((delay / h).round() as usize, dim)
    }

    pub fn delay_steps(&self) -> usize {
        self.delay_steps
    }

    pub fn write(&mut self, step: usize, s: &[f64]) {
        let slot = step % self.slots.len();
        self.slots[slot].copy_from_slice(s);
        self.written[slot] = Some(step);
    }

    pub fn read(&self, step: usize) -> &[f64] {
        if step < self.delay_steps {
            return &self.zero;
        }
        let src = step - self.delay_steps;
        let slot = src % self.slots.len();
        match self.written[slot] {
            Some(s) if s == src => &self.slots[slot],
            _ => &self.zero,
        }
    }

    /// Read at time `t` on a grid of step `h`.
    pub fn read_at(&self, t: f64, h: f64) -> &[f64] {
        self.read((t / h).round() as usize)
    }

    /// `(Σ s, Σ ‖s‖²)` over the samples sent at steps `next − delay_steps ..
    /// next − 1`, i.e. everything still in flight when step `next` begins.
    pub fn in_flight(&self, next: usize) -> (Vec<f64>, f64) {
        let mut sum = self.zero.clone();
        let mut sq = 0.0;
        for m in next.saturating_sub(self.delay_steps)..next {
            let slot = m % self.slots.len();
            if self.written[slot] == Some(m) {
                for (a, v) in sum.iter_mut().zip(&self.slots[slot]) {
                    *a += v;
                }
                sq += self.slots[slot].iter().map(|v| v * v).sum::<f64>();
            }
        }
        (sum, sq)
    }
}

/// Port and wave values of one link at one step. `*_lo` belong to the lower
/// id endpoint. `s_*` are the waves sent by that endpoint, `s_in_*` the waves it received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub r_lo: Vec<f64>,
    pub r_hi: Vec<f64>,
    pub v_lo: Vec<f64>,
    pub v_hi: Vec<f64>,
    pub s_lo: Vec<f64>,
    pub s_hi: Vec<f64>,
    pub s_in_lo: Vec<f64>,
    pub s_in_hi: Vec<f64>,
    /// `Σ s` and `Σ ‖s‖²` over the waves sent by the lower id that are still
    /// in flight at the start of this step (pre-history counts as zeros).
    pub flight_sum_lo: Vec<f64>,
    pub flight_sq_lo: f64,
    pub flight_sum_hi: Vec<f64>,
    pub flight_sq_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkInfo {
    pub lo: usize,
    pub hi: usize,
    pub a: f64,
    pub b: f64,
    pub delay_from_lo: f64,
    pub delay_from_hi: f64,
    pub steps_from_lo: usize,
    pub steps_from_hi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub step: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub rho: Vec<f64>,
    pub links: Vec<LinkRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetadata {
    pub steps_taken: usize,
    pub diverged: bool,
    pub divergence_time: Option<f64>,
    pub pd_rejections: usize,
    /// `max |T − h·round(T/h)|` over all directions.
    pub delay_quantization_error: f64,
    /// Linear solves (1) plus refinements (≤ 1) used by the worst instantaneous loop.
    pub max_zero_delay_iterations: usize,
}

/// Sampled trajectory plus run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub n: usize,
    pub dim: usize,
    pub constraint_counts: Vec<usize>,
    pub h: f64,
    pub stride: usize,
    pub alpha: f64,
    pub eta: f64,
    pub algorithm: Algorithm,
    pub transport: Transport,
    pub links: Vec<LinkInfo>,
    pub samples: Vec<Sample>,
    pub meta: RunMetadata,
}

impl Telemetry {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("telemetry always holds the initial sample")
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn agent_x<'a>(&self, s: &'a Sample, i: usize) -> &'a [f64] {
        &s.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn agent_xi<'a>(&self, s: &'a Sample, i: usize) -> &'a [f64] {
        &s.xi[i * self.dim..(i + 1) * self.dim]
    }

    pub fn agent_rho<'a>(&self, s: &'a Sample, i: usize) -> &'a [f64] {
        let start: usize = self.constraint_counts[..i].iter().sum();
        &s.rho[start..start + self.constraint_counts[i]]
    }

    pub fn mean_x(&self, s: &Sample) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.n {
            for (acc, v) in m.iter_mut().zip(self.agent_x(s, i)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n as f64);
        m
    }

    /// Header for [`Telemetry::write_csv`]; ids are 1-based.
    pub fn csv_header(&self, channels: &[(&str, &[f64])]) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        for i in 0..self.n {
            for k in 0..self.dim {
                cols.push(format!("x_{}_{}", i + 1, k + 1));
            }
        }
        for i in 0..self.n {
            for k in 0..self.dim {
                cols.push(format!("xi_{}_{}", i + 1, k + 1));
            }
        }
        for (i, &m) in self.constraint_counts.iter().enumerate() {
            for l in 0..m {
                cols.push(format!("rho_{}_{}", i + 1, l + 1));
            }
        }
        cols.extend(channels.iter().map(|(name, _)| name.to_string()));
        cols
    }

    /// Writes one row per sample: time, states, then each monitor channel
    /// (each channel must have one value per sample).
    pub fn write_csv(&self, path: &Path, channels: &[(&str, &[f64])]) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv_to(&mut w, channels)?;
        w.flush()
    }

    pub fn write_csv_to<W: Write>(&self, w: &mut W, channels: &[(&str, &[f64])]) -> std::io::Result<()> {
        for (name, values) in channels {
            if values.len() != self.samples.len() {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    format!("channel {name} has {} values for {} samples", values.len(), self.samples.len()),
                ));
            }
        }
        writeln!(w, "{}", self.csv_header(channels).join(","))?;
        for (k, s) in self.samples.iter().enumerate() {
            let mut row = Vec::with_capacity(1 + s.x.len() + s.xi.len() + s.rho.len() + channels.len());
            row.push(s.t);
            row.extend(&s.x);
            row.extend(&s.xi);
            row.extend(&s.rho);
            row.extend(channels.iter().map(|(_, v)| v[k]));
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Initial swarm state: `x_i` from the family's sampler (uniform `[0,1]^N` by
/// default), `ξ = 0`, `ρ = 0`.
pub fn initial_state(p: &ProblemInstance, seed: u64) -> SwarmState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents = (0..p.n())
        .map(|i| {
            let a = p.agent(i);
            AgentState {
                x: a.sample_initial(&mut rng),
                xi: vec![0.0; p.dim()],
                rho: vec![0.0; a.constraint_count()],
            }
        })
        .collect();
    SwarmState { agents, t: 0.0 }
}


struct LinkChannel {
    link: Option<ScatteringLink>,
    // waves (or states) sent by lo / by hi
    from_lo: DelayLine,
    from_hi: DelayLine,
    // running in-flight statistics, refreshed exactly every FLIGHT_RESYNC steps
    flight_lo: (Vec<f64>, f64),
    flight_hi: (Vec<f64>, f64),
}

const FLIGHT_RESYNC: usize = 1024;

fn advance_flight(flight: &mut (Vec<f64>, f64), entering: &[f64], leaving: &[f64]) {
    for ((a, e), l) in flight.0.iter_mut().zip(entering).zip(leaving) {
        *a += e - l;
    }
    flight.1 += entering.iter().map(|v| v * v).sum::<f64>() - leaving.iter().map(|v| v * v).sum::<f64>();
}

struct Exchange {
    r: Vec<f64>,
    v: Vec<f64>,
    s_out: Vec<f64>,
}

fn exchange(
    link: &ScatteringLink,
    agent: usize,
    st: &AgentState,
    s_in: &[f64],
    t: f64,
    corrupt: bool,
) -> Result<Exchange, ScatteringError> {
    let r = if corrupt && agent == link.hi {
        let flipped: Vec<f64> = s_in.iter().map(|v| -v).collect();
        scattering::decode(link, agent, &flipped, &st.x, &st.xi)?
    } else {
        scattering::decode(link, agent, s_in, &st.x, &st.xi)?
    };
    let v = dynamics::controller_output(link.a, link.b, &st.x, &st.xi, &r);
    let s_out = scattering::encode(link, agent, &v, &r, t)?.s;
    Ok(Exchange { r, v, s_out })
}

// One step of the scattering channel on a link; returns the record and the
// number of solves spent on an instantaneous loop.
fn scatter_step(
    ch: &mut LinkChannel,
    state: &SwarmState,
    step: usize,
    t: f64,
    corrupt: bool,
) -> Result<(LinkRecord, usize), SimError> {
    let link = ch.link.as_ref().expect("scattering channel");
    let (lo, hi) = (link.lo, link.hi);
    let (st_lo, st_hi) = (&state.agents[lo], &state.agents[hi]);
    let dl = ch.from_lo.delay_steps();
    let dh = ch.from_hi.delay_steps();
    let mut iterations = 0;
    let (e_lo, e_hi, s_in_lo, s_in_hi) = if dl > 0 && dh > 0 {
        let s_in_lo = ch.from_hi.read(step).to_vec();
        let s_in_hi = ch.from_lo.read(step).to_vec();
        let e_lo = exchange(link, lo, st_lo, &s_in_lo, t, corrupt)?;
        let e_hi = exchange(link, hi, st_hi, &s_in_hi, t, corrupt)?;
        (e_lo, e_hi, s_in_lo, s_in_hi)
    } else if dl == 0 && dh > 0 {
        let s_in_lo = ch.from_hi.read(step).to_vec();
        let e_lo = exchange(link, lo, st_lo, &s_in_lo, t, corrupt)?;
        let s_in_hi = e_lo.s_out.clone();
        let e_hi = exchange(link, hi, st_hi, &s_in_hi, t, corrupt)?;
        (e_lo, e_hi, s_in_lo, s_in_hi)
    } else if dh == 0 && dl > 0 {
        let s_in_hi = ch.from_lo.read(step).to_vec();
        let e_hi = exchange(link, hi, st_hi, &s_in_hi, t, corrupt)?;
        let s_in_lo = e_hi.s_out.clone();
        let e_lo = exchange(link, lo, st_lo, &s_in_lo, t, corrupt)?;
        (e_lo, e_hi, s_in_lo, s_in_hi)
    } else {
        // Both directions instantaneous: the round trip s ↦ F(s) is affine,
        // so solve (I − A)s = F(0) directly instead of iterating the
        // (slowly contracting) reflection.
        let round_trip = |s: &[f64]| -> Result<Vec<f64>, ScatteringError> {
            let e_lo = exchange(link, lo, st_lo, s, t, corrupt)?;
            Ok(exchange(link, hi, st_hi, &e_lo.s_out, t, corrupt)?.s_out)
        };
        let m = 2 * st_lo.x.len();
        let c = round_trip(&vec![0.0; m])?;
        let mut system = DMatrix::<f64>::identity(m, m);
        let mut probe = vec![0.0; m];
        for k in 0..m {
            probe[k] = 1.0;
            let col = round_trip(&probe)?;
            probe[k] = 0.0;
            for r in 0..m {
                system[(r, k)] -= col[r] - c[r];
            }
        }
        let lu = system.clone().lu();
        let mut s_in_lo: Vec<f64> = lu
            .solve(&DVector::from_vec(c.clone()))
            .ok_or(SimError::ZeroDelayLoop { edge: (lo, hi) })?
            .iter()
            .copied()
            .collect();
        // one step of iterative refinement
        let fixed = round_trip(&s_in_lo)?;
        let defect: Vec<f64> = fixed.iter().zip(&s_in_lo).map(|(a, b)| a - b).collect();
        iterations = 1;
        if norm(&defect) > 0.0 {
            if let Some(corr) = lu.solve(&DVector::from_vec(defect)) {
                for (s, d) in s_in_lo.iter_mut().zip(corr.iter()) {
                    *s += d;
                }
                iterations = 2;
            }
        }
        let e_lo = exchange(link, lo, st_lo, &s_in_lo, t, corrupt)?;
        let s_in_hi = e_lo.s_out.clone();
        let e_hi = exchange(link, hi, st_hi, &s_in_hi, t, corrupt)?;
        let scale = 1.0 + norm(&e_hi.s_out);
        if !(norm(&sub(&e_hi.s_out, &s_in_lo)) <= 1e-9 * scale) {
            return Err(SimError::ZeroDelayLoop { edge: (lo, hi) });
        }
        (e_lo, e_hi, s_in_lo, s_in_hi)
    };
    let flight_lo = ch.flight_lo.clone();
    let flight_hi = ch.flight_hi.clone();
    ch.from_lo.write(step, &e_lo.s_out);
    ch.from_hi.write(step, &e_hi.s_out);
    if (step + 1) % FLIGHT_RESYNC == 0 {
        ch.flight_lo = ch.from_lo.in_flight(step + 1);
        ch.flight_hi = ch.from_hi.in_flight(step + 1);
    } else {
        // what lo sent d steps ago is exactly what hi received now
        advance_flight(&mut ch.flight_lo, &e_lo.s_out, &s_in_hi);
        advance_flight(&mut ch.flight_hi, &e_hi.s_out, &s_in_lo);
    }
    Ok((
        LinkRecord {
            r_lo: e_lo.r,
            r_hi: e_hi.r,
            v_lo: e_lo.v,
            v_hi: e_hi.v,
            s_lo: e_lo.s_out,
            s_hi: e_hi.s_out,
            s_in_lo,
            s_in_hi,
            flight_sum_lo: flight_lo.0,
            flight_sq_lo: flight_lo.1,
            flight_sum_hi: flight_hi.0,
            flight_sq_hi: flight_hi.1,
        },
        iterations,
    ))
}

/// Runs the configured algorithm from `init` over `[0, t_end]`.
///
/// A state norm above `blowup_threshold` (or a non-finite value) ends the run
/// early with `meta.diverged` set; this is a result, not an error.
pub fn run(
    p: &ProblemInstance,
    g: &NetworkGraph,
    cfg: &SimConfig,
    init: &SwarmState,
) -> Result<Telemetry, SimError> {
    run_observed(p, g, cfg, init, None)
}

/// Callback invoked with every step's sample (not just the recorded ones).
/// The telemetry argument carries the run header and the samples recorded so far.
pub type Observer<'a> = &'a mut dyn FnMut(&Telemetry, &Sample);

/// [`run`], additionally showing every step to `observer`. Link records are
/// always included in observed samples when scattering is on.
pub fn run_observed(
    p: &ProblemInstance,
    g: &NetworkGraph,
    cfg: &SimConfig,
    init: &SwarmState,
    mut observer: Option<Observer<'_>>,
) -> Result<Telemetry, SimError> {
    cfg.validate()?;
    init.validate(p)?;
    if g.n() != p.n() {
        return Err(SimError::InvalidConfig(vec![format!(
            "graph has {} agents, problem has {}",
            g.n(),
            p.n()
        )]));
    }
    let dim = p.dim();
    let h = cfg.h;
    let transport = cfg.transport();
    let delays = cfg.resolve_delays(g)?;
    let mut channels = Vec::new();
    let mut links = Vec::new();
    let mut quantization: f64 = 0.0;
    for (e, &(d_lo, d_hi)) in g.edges().iter().zip(&delays) {
        let from_lo = DelayLine::with_delay(d_lo, h, 2 * dim);
        let from_hi = DelayLine::with_delay(d_hi, h, 2 * dim);
        if transport != Transport::Ideal {
            quantization = quantization
                .max((d_lo - h * from_lo.delay_steps() as f64).abs())
                .max((d_hi - h * from_hi.delay_steps() as f64).abs());
        }
        links.push(LinkInfo {
            lo: e.i,
            hi: e.j,
            a: e.a,
            b: e.b,
            delay_from_lo: if transport == Transport::Ideal { 0.0 } else { d_lo },
            delay_from_hi: if transport == Transport::Ideal { 0.0 } else { d_hi },
            steps_from_lo: if transport == Transport::Ideal { 0 } else { from_lo.delay_steps() },
            steps_from_hi: if transport == Transport::Ideal { 0 } else { from_hi.delay_steps() },
        });
        let link = if transport == Transport::Scattering {
            Some(ScatteringLink::new(e.i, e.j, e.a, e.b, cfg.eta, d_lo, d_hi)?)
        } else {
            None
        };
        channels.push(LinkChannel {
            link,
            from_lo,
            from_hi,
            flight_lo: (vec![0.0; 2 * dim], 0.0),
            flight_hi: (vec![0.0; 2 * dim], 0.0),
        });
    }

    let mut tel = Telemetry {
        n: p.n(),
        dim,
        constraint_counts: p.constraint_counts(),
        h,
        stride: cfg.record_stride,
        alpha: cfg.alpha,
        eta: cfg.eta,
        algorithm: cfg.algorithm,
        transport,
        links,
        samples: Vec::new(),
        meta: RunMetadata {
            delay_quantization_error: quantization,
            ..RunMetadata::default()
        },
    };

    let total = cfg.steps();
    let mut state = init.clone();
    state.t = 0.0;
    let margin_floor = cfg.q_mineig_floor;
    for step in 0..=total {
        let t = step as f64 * h;
        state.t = t;

        // gather what each agent holds about its neighbors
        let mut received: Vec<Vec<Received>> = vec![Vec::new(); p.n()];
        let mut records = Vec::new();
        match transport {
            Transport::Ideal => {}
            Transport::NaiveDelay => {
                for (e, ch) in g.edges().iter().zip(channels.iter_mut()) {
                    ch.from_lo.write(step, &state.agents[e.i].port());
                    ch.from_hi.write(step, &state.agents[e.j].port());
                    received[e.i].push(Received {
                        neighbor: e.j,
                        r: ch.from_hi.read(step).to_vec(),
                    });
                    received[e.j].push(Received {
                        neighbor: e.i,
                        r: ch.from_lo.read(step).to_vec(),
                    });
                }
            }
            Transport::Scattering => {
                for ch in channels.iter_mut() {
                    let (rec, iters) = scatter_step(ch, &state, step, t, cfg.corrupt_decode)?;
                    tel.meta.max_zero_delay_iterations = tel.meta.max_zero_delay_iterations.max(iters);
                    let link = ch.link.as_ref().expect("scattering channel");
                    received[link.lo].push(Received {
                        neighbor: link.hi,
                        r: rec.r_lo.clone(),
                    });
                    received[link.hi].push(Received {
                        neighbor: link.lo,
                        r: rec.r_hi.clone(),
                    });
                    records.push(rec);
                }
            }
        }

        let recorded = step % cfg.record_stride == 0 || step == total;
        if recorded || observer.is_some() {
            let sample = Sample {
                step,
                t,
                x: state.stacked_x(),
                xi: state.stacked_xi(),
                rho: state.stacked_rho(),
                links: records,
            };
            if let Some(obs) = observer.as_mut() {
                obs(&tel, &sample);
            }
            if recorded {
                let mut sample = sample;
                if !cfg.record_links {
                    sample.links.clear();
                }
                tel.samples.push(sample);
            }
        }
        if step == total {
            break;
        }

        let derivs = derivatives(p, g, cfg, transport, &state, &received)?;
        advance(p, &mut state, &derivs, h, margin_floor, &mut tel.meta.pd_rejections)?;
        tel.meta.steps_taken = step + 1;

        let size = state.max_norm();
        if !(size <= cfg.blowup_threshold) {
            tel.meta.diverged = true;
            tel.meta.divergence_time = Some(t + h);
            let sample = Sample {
                step: step + 1,
                t: t + h,
                x: state.stacked_x(),
                xi: state.stacked_xi(),
                rho: state.stacked_rho(),
                links: Vec::new(),
            };
            if let Some(obs) = observer.as_mut() {
                obs(&tel, &sample);
            }
            tel.samples.push(sample);
            break;
        }
    }
    Ok(tel)
}

fn derivatives(
    p: &ProblemInstance,
    g: &NetworkGraph,
    cfg: &SimConfig,
    transport: Transport,
    state: &SwarmState,
    received: &[Vec<Received>],
) -> Result<Vec<AgentDerivative>, SimError> {
    let dim = p.dim();
    let alpha = cfg.alpha;
    if transport == Transport::Ideal {
        let x = state.stacked_x();
        let xi = state.stacked_xi();
        let (dx, dxi, drho) = match cfg.algorithm {
            Algorithm::GradientConsensus => {
                (consensus_gradient_rhs(p, g, alpha, &x), vec![0.0; xi.len()], Vec::new())
            }
            Algorithm::PiConsensus => {
                let (dx, dxi) = pi_consensus_rhs(p, g, alpha, &x, &xi);
                (dx, dxi, Vec::new())
            }
            Algorithm::Constrained => {
                let d = constrained_rhs(p, g, alpha, &x, &xi, &state.stacked_rho())?;
                (d.dx, d.dxi, d.drho)
            }
        };
        let off = p.constraint_offsets();
        return Ok((0..p.n())
            .map(|i| AgentDerivative {
                dx: dx[i * dim..(i + 1) * dim].to_vec(),
                dxi: dxi[i * dim..(i + 1) * dim].to_vec(),
                drho: if drho.is_empty() {
                    vec![0.0; off[i + 1] - off[i]]
                } else {
                    drho[off[i]..off[i + 1]].to_vec()
                },
            })
            .collect());
    }
    (0..p.n())
        .map(|i| {
            let st = &state.agents[i];
            let d = match cfg.algorithm {
                Algorithm::GradientConsensus => {
                    delayed_gradient_consensus_rhs(p, g, alpha, i, st, &received[i])?
                }
                Algorithm::PiConsensus => {
                    // constraints, if any, are ignored by the unconstrained algorithm
                    let bare = AgentState {
                        x: st.x.clone(),
                        xi: st.xi.clone(),
                        rho: Vec::new(),
                    };
                    let mut d = delayed_agent_rhs(p, g, alpha, i, &bare, &received[i])?;
                    d.drho = vec![0.0; st.rho.len()];
                    d
                }
                Algorithm::Constrained => delayed_agent_rhs(p, g, alpha, i, st, &received[i])?,
            };
            Ok(d)
        })
        .collect()
}

fn advance(
    p: &ProblemInstance,
    state: &mut SwarmState,
    derivs: &[AgentDerivative],
    h: f64,
    margin_floor: f64,
    rejections: &mut usize,
) -> Result<(), SimError> {
    for (i, (st, d)) in state.agents.iter_mut().zip(derivs).enumerate() {
        let agent = p.agent(i);
        let mut factor = 1.0;
        let mut halvings = 0;
        loop {
            let x_new: Vec<f64> = st.x.iter().zip(&d.dx).map(|(x, v)| x + factor * h * v).collect();
            match agent.domain_margin(&x_new) {
                Some(margin) if !(margin >= margin_floor) => {
                    if halvings == 20 {
                        return Err(SimError::StepRejectedPd {
                            t: state.t,
                            agent: i,
                            min_eig: margin,
                        });
                    }
                    halvings += 1;
                    *rejections += 1;
                    factor *= 0.5;
                }
                _ => {
                    st.x = x_new;
                    for (xi, v) in st.xi.iter_mut().zip(&d.dxi) {
                        *xi += factor * h * v;
                    }
                    for (r, v) in st.rho.iter_mut().zip(&d.drho) {
                        *r = (*r + factor * h * v).max(0.0);
                    }
                    break;
                }
            }
        }
    }
    Ok(())
}
