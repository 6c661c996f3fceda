//! Coupled distributed stochastic approximation.
//!
//! Each iteration is a local stochastic gradient step on both the decision
//! variable and the learned parameter, followed by one round of mixing with
//! the weight matrix:
//!
//! ```text
//! X(k+1) = W (X(k) - α_k G(X(k), Θ(k), ξ(k)))
//! Θ(k+1) = W (Θ(k) - γ_k Φ(Θ(k), ζ(k)))
//! ```

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::WeightMatrix;
use crate::problems::{AnalyticConstants, CoupledProblem};
use crate::rng::{CounterRng, StreamTag};

/// Stacked iterates: row `i` of `x` is `x_i(k)`, row `i` of `theta` is `θ_i(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub x: Array2<f64>,
    pub theta: Array2<f64>,
    pub k: usize,
}

impl SwarmState {
    pub fn new(x: Array2<f64>, theta: Array2<f64>, k: usize) -> Result<Self> {
        if x.nrows() != theta.nrows() {
            return Err(Error::Problem(format!(
                "x has {} rows but theta has {}",
                x.nrows(),
                theta.nrows()
            )));
        }
        // Row-major contiguous storage is assumed by the hot loop.
        let x = x.as_standard_layout().into_owned();
        let theta = theta.as_standard_layout().into_owned();
        let state = Self { x, theta, k };
        state.check_finite()?;
        Ok(state)
    }

    /// Every agent starts from the same `(x0, θ0)`.
    pub fn consensual(n: usize, x0: &[f64], theta0: &[f64]) -> Self {
        let x = Array2::from_shape_fn((n, x0.len()), |(_, j)| x0[j]);
        let theta = Array2::from_shape_fn((n, theta0.len()), |(_, j)| theta0[j]);
        Self { x, theta, k: 0 }
    }

    /// The problem's default starting point on every agent.
    pub fn initial<P: CoupledProblem>(problem: &P) -> Self {
        let (x0, t0) = problem.initial_point();
        Self::consensual(problem.agents(), &x0, &t0)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.theta.ncols()
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, m) in [("x", &self.x), ("theta", &self.theta)] {
            if let Some(((i, j), v)) = m.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite {
                    iteration: self.k,
                    what: format!("{name}[{i}][{j}] = {v}"),
                });
            }
        }
        Ok(())
    }

    fn x_slice(&self) -> &[f64] {
        self.x.as_slice().expect("standard layout")
    }

    fn theta_slice(&self) -> &[f64] {
        self.theta.as_slice().expect("standard layout")
    }
}

/// Step sizes `(α_k, γ_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepsizePolicy {
    /// `α_k = β / (μ_x (k + K))`, `γ_k = β / (μ_θ (k + K))`.
    Harmonic { beta: f64, k_offset: u64, mu_x: f64, mu_theta: f64 },
    /// `α_k = γ_k = a / (k + b)`.
    Explicit { a: f64, b: f64 },
}

impl StepsizePolicy {
    pub fn harmonic(beta: f64, k_offset: u64, mu_x: f64, mu_theta: f64) -> Result<Self> {
        if !(beta > 2.0) || !beta.is_finite() {
            return Err(Error::Policy(format!("beta must exceed 2, got {beta}")));
        }
        if k_offset == 0 {
            return Err(Error::Policy("K must be a positive integer".into()));
        }
        if !(mu_x > 0.0 && mu_theta > 0.0) || !(mu_x.is_finite() && mu_theta.is_finite()) {
            return Err(Error::Policy(format!(
                "strong convexity constants must be positive, got mu_x = {mu_x}, mu_theta = {mu_theta}"
            )));
        }
        Ok(Self::Harmonic {
            beta,
            k_offset,
            mu_x,
            mu_theta,
        })
    }

    /// Harmonic policy with `K` derived from the problem constants.
    pub fn from_constants(beta: f64, c: &AnalyticConstants) -> Result<Self> {
        let k = compute_k(beta, c.m_x, c.l_x, c.mu_x, c.m_theta, c.l_theta, c.mu_theta)?;
        Self::harmonic(beta, k, c.mu_x, c.mu_theta)
    }

    pub fn explicit(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) || !(a.is_finite() && b.is_finite()) {
            return Err(Error::Policy(format!("a and b must be positive, got a = {a}, b = {b}")));
        }
        Ok(Self::Explicit { a, b })
    }

    /// Re-checks the constructor invariants (used after deserialization).
    pub fn validated(self) -> Result<Self> {
        match self {
            Self::Harmonic {
                beta,
                k_offset,
                mu_x,
                mu_theta,
            } => Self::harmonic(beta, k_offset, mu_x, mu_theta),
            Self::Explicit { a, b } => Self::explicit(a, b),
        }
    }

    pub fn stepsizes(&self, k: usize) -> (f64, f64) {
        let k = k as f64;
        match *self {
            Self::Harmonic {
                beta,
                k_offset,
                mu_x,
                mu_theta,
            } => {
                let t = k + k_offset as f64;
                (beta / (mu_x * t), beta / (mu_theta * t))
            }
            Self::Explicit { a, b } => {
                let s = a / (k + b);
                (s, s)
            }
        }
    }
}

/// `K = ⌈max{3β(1+M_x)L_x²/μ_x², 3β(1+M_θ)L_θ²/μ_θ²}⌉`.
pub fn compute_k(beta: f64, m_x: f64, l_x: f64, mu_x: f64, m_theta: f64, l_theta: f64, mu_theta: f64) -> Result<u64> {
    let positive = [("beta", beta), ("L_x", l_x), ("mu_x", mu_x), ("L_theta", l_theta), ("mu_theta", mu_theta)];
    for (name, v) in positive {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Policy(format!("{name} must be positive, got {v}")));
        }
    }
    for (name, v) in [("M_x", m_x), ("M_theta", m_theta)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Policy(format!("{name} must be non-negative, got {v}")));
        }
    }
    let branch = |m: f64, l: f64, mu: f64| 3.0 * beta * (1.0 + m) * l * l / (mu * mu);
    let k = branch(m_x, l_x, mu_x).max(branch(m_theta, l_theta, mu_theta)).ceil();
    Ok((k as u64).max(1))
}

/// Local iterates `(X̃, Θ̃)` after the gradient phase of iteration `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalIterates {
    pub x: Array2<f64>,
    pub theta: Array2<f64>,
    pub k: usize,
}

/// Gradient phase of iteration `state.k`.
///
/// Agent `i` evaluates its own oracles at `(x_i, θ_i)` with randomness drawn
/// from the streams addressed by `(path_seed, i, k)`.
pub fn sgd_phase<P: CoupledProblem>(
    state: &SwarmState,
    problem: &P,
    alpha: f64,
    gamma: f64,
    path_seed: u64,
) -> Result<LocalIterates> {
    check_dims(state, problem)?;
    let mut x = state.x.as_standard_layout().into_owned();
    let mut theta = state.theta.as_standard_layout().into_owned();
    let mut scratch = Scratch::new(state.p(), state.q());
    sgd_into(
        state,
        problem,
        alpha,
        gamma,
        path_seed,
        x.as_slice_mut().expect("standard layout"),
        theta.as_slice_mut().expect("standard layout"),
        &mut scratch,
    )?;
    Ok(LocalIterates { x, theta, k: state.k })
}

/// Mixing phase: `X(k+1) = W X̃`, `Θ(k+1) = W Θ̃`.
pub fn mix_phase(w: &WeightMatrix, local: &LocalIterates) -> Result<SwarmState> {
    let n = w.n();
    if local.x.nrows() != n || local.theta.nrows() != n {
        return Err(Error::Problem(format!(
            "weight matrix is {n}x{n} but iterates have {} rows",
            local.x.nrows()
        )));
    }
    let xt = local.x.as_standard_layout();
    let tt = local.theta.as_standard_layout();
    let (p, q) = (xt.ncols(), tt.ncols());
    let mut x = Array2::zeros((n, p));
    let mut theta = Array2::zeros((n, q));
    w.mix_into(xt.as_slice().unwrap(), x.as_slice_mut().unwrap(), p);
    w.mix_into(tt.as_slice().unwrap(), theta.as_slice_mut().unwrap(), q);
    Ok(SwarmState {
        x,
        theta,
        k: local.k + 1,
    })
}

struct Scratch {
    g: Vec<f64>,
    phi: Vec<f64>,
}

impl Scratch {
    fn new(p: usize, q: usize) -> Self {
        Self {
            g: vec![0.0; p],
            phi: vec![0.0; q],
        }
    }
}

fn check_dims<P: CoupledProblem>(state: &SwarmState, problem: &P) -> Result<()> {
    if state.n() != problem.agents() || state.p() != problem.decision_dim() || state.q() != problem.param_dim() {
        return Err(Error::Problem(format!(
            "state is {}x({}, {}) but the problem expects {}x({}, {})",
            state.n(),
            state.p(),
            state.q(),
            problem.agents(),
            problem.decision_dim(),
            problem.param_dim()
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sgd_into<P: CoupledProblem>(
    state: &SwarmState,
    problem: &P,
    alpha: f64,
    gamma: f64,
    path_seed: u64,
    x_out: &mut [f64],
    theta_out: &mut [f64],
    scratch: &mut Scratch,
) -> Result<()> {
    let (p, q, k) = (state.p(), state.q(), state.k);
    let xs = state.x_slice();
    let ts = state.theta_slice();
    for i in 0..state.n() {
        let xi = &xs[i * p..(i + 1) * p];
        let ti = &ts[i * q..(i + 1) * q];

        let mut rng = CounterRng::for_draw(path_seed, i, k, StreamTag::Computational);
        problem.comp_grad(i, xi, ti, &mut rng, &mut scratch.g);
        let mut rng = CounterRng::for_draw(path_seed, i, k, StreamTag::Learning);
        problem.learn_grad(i, ti, &mut rng, &mut scratch.phi);

        if scratch.g.iter().chain(&scratch.phi).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                iteration: k,
                what: format!("oracle output of agent {i}"),
            });
        }
        for ((o, &xa), &ga) in x_out[i * p..(i + 1) * p].iter_mut().zip(xi).zip(&scratch.g) {
            *o = xa - alpha * ga;
        }
        for ((o, &ta), &pa) in theta_out[i * q..(i + 1) * q].iter_mut().zip(ti).zip(&scratch.phi) {
            *o = ta - gamma * pa;
        }
    }
    Ok(())
}

/// Recording checkpoints: every iteration up to `dense_until`, then
/// `log_points` geometrically spaced checkpoints, the round values
/// `{1, 2, 5}·10^j`, and `k_max` itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    points: Vec<usize>,
}

pub const DEFAULT_DENSE_UNTIL: usize = 100;
pub const DEFAULT_LOG_POINTS: usize = 100;

impl Schedule {
    pub fn standard(k_max: usize, dense_until: usize, log_points: usize) -> Self {
        let mut pts: Vec<usize> = (1..=dense_until.min(k_max)).collect();
        let start = dense_until.max(1);
        if k_max > start && log_points > 0 {
            let ratio = (k_max as f64 / start as f64).ln();
            for j in 1..=log_points {
                let k = (start as f64 * (ratio * j as f64 / log_points as f64).exp()).round() as usize;
                pts.push(k.clamp(1, k_max));
            }
        }
        let mut decade = 1usize;
        while decade <= k_max {
            for m in [1, 2, 5] {
                let k = m * decade;
                if k <= k_max {
                    pts.push(k);
                }
            }
            decade = decade.saturating_mul(10);
        }
        if k_max >= 1 {
            pts.push(k_max);
        }
        pts.sort_unstable();
        pts.dedup();
        Self { points: pts }
    }

    pub fn with_defaults(k_max: usize) -> Self {
        Self::standard(k_max, DEFAULT_DENSE_UNTIL, DEFAULT_LOG_POINTS)
    }

    /// Explicit checkpoint list; must be strictly increasing and start at ≥ 1.
    pub fn from_points(points: Vec<usize>) -> Result<Self> {
        if points.first() == Some(&0) || points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Trace("schedule must be strictly increasing and start at k >= 1".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn contains(&self, k: usize) -> bool {
        self.points.binary_search(&k).is_ok()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Observer of a run.
pub trait Recorder {
    /// Called with the state after every completed iteration.
    fn observe(&mut self, _state: &SwarmState) {}
    /// Whether the state after iteration `k` should be recorded.
    fn wants(&self, k: usize) -> bool;
    fn record(&mut self, state: &SwarmState);
}

/// Runs `k_max` iterations from `initial`, handing post-iteration states to
/// `recorder`. Deterministic given `path_seed`.
#[allow(clippy::too_many_arguments)]
pub fn run<P: CoupledProblem, R: Recorder>(
    problem: &P,
    w: &WeightMatrix,
    policy: &StepsizePolicy,
    initial: &SwarmState,
    k_max: usize,
    path_seed: u64,
    recorder: &mut R,
) -> Result<SwarmState> {
    if k_max == 0 {
        return Err(Error::Problem("k_max must be at least 1".into()));
    }
    if w.n() != problem.agents() {
        return Err(Error::Problem(format!(
            "weight matrix is {}x{} but the problem has {} agents",
            w.n(),
            w.n(),
            problem.agents()
        )));
    }
    check_dims(initial, problem)?;
    initial.check_finite()?;

    let (n, p, q) = (initial.n(), initial.p(), initial.q());
    let mut state = SwarmState {
        x: initial.x.as_standard_layout().into_owned(),
        theta: initial.theta.as_standard_layout().into_owned(),
        k: initial.k,
    };
    let mut x_tilde = vec![0.0; n * p];
    let mut theta_tilde = vec![0.0; n * q];
    let mut scratch = Scratch::new(p, q);
    let k_end = initial.k + k_max;

    while state.k < k_end {
        let (alpha, gamma) = policy.stepsizes(state.k);
        sgd_into(
            &state,
            problem,
            alpha,
            gamma,
            path_seed,
            &mut x_tilde,
            &mut theta_tilde,
            &mut scratch,
        )?;
        w.mix_into(&x_tilde, state.x.as_slice_mut().unwrap(), p);
        w.mix_into(&theta_tilde, state.theta.as_slice_mut().unwrap(), q);
        state.k += 1;
        if state.x.iter().chain(state.theta.iter()).any(|v| !v.is_finite()) {
            state.check_finite()?;
        }
        recorder.observe(&state);
        if recorder.wants(state.k) {
            recorder.record(&state);
        }
    }
    Ok(state)
}
