//! Streaming ridge regression with an unknown regularization weight.
//!
//! Agent `i` minimizes `E[(uᵀx - v)²] + θ‖x‖²` with `u ~ U(-0.5, 0.5)^5` and
//! `v = uᵀx̃ + ε`, `ε ~ N(0, 0.01)`, while the agents jointly learn
//! `θ* = argmin Σ_i (θ - α_i)²`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{learning_optimum, learning_target, AnalyticConstants, CoupledProblem, Optimum};
use crate::error::{Error, Result};

pub const DIM: usize = 5;
/// Shared regression target.
pub const X_TILDE: [f64; DIM] = [1.0, 3.0, 5.0, 4.0, 9.0];
pub const FEATURE_HALF_WIDTH: f64 = 0.5;
pub const NOISE_STD: f64 = 0.1;
/// Second moment of one feature coordinate, `E[u_a²] = 1/12`.
const FEATURE_VAR: f64 = 1.0 / 12.0;

/// Draws one `(u, v)` sample.
pub fn ridge_sample<R: Rng + ?Sized>(rng: &mut R) -> ([f64; DIM], f64) {
    let mut u = [0.0; DIM];
    for c in &mut u {
        *c = 2.0 * FEATURE_HALF_WIDTH * rng.random::<f64>() - FEATURE_HALF_WIDTH;
    }
    let eps: f64 = rng.sample(StandardNormal);
    let v = dot(&u, &X_TILDE) + NOISE_STD * eps;
    (u, v)
}

/// Gradient in `x` of the per-sample loss `(uᵀx - v)² + θ‖x‖²`.
pub fn ridge_comp_grad(x: &[f64], theta: f64, u: &[f64], v: f64, out: &mut [f64]) {
    let r = 2.0 * (dot(u, x) - v);
    for ((o, &ua), &xa) in out.iter_mut().zip(u).zip(x) {
        *o = r * ua + 2.0 * theta * xa;
    }
}

/// Gradient of `h_i(θ) = (θ - α_i)²`.
pub fn ridge_learn_grad(agent: usize, theta: f64) -> f64 {
    2.0 * (theta - learning_target(agent))
}

/// Closed-form `(x*, θ*)` for `n` agents.
pub fn ridge_optimum(n: usize) -> (Vec<f64>, f64) {
    let theta = learning_optimum(n);
    (x_star_for(theta), theta)
}

/// `x*(θ) = (1/12) / (1/12 + θ) · x̃`.
pub(crate) fn x_star_for(theta: f64) -> Vec<f64> {
    let scale = FEATURE_VAR / (FEATURE_VAR + theta);
    X_TILDE.iter().map(|v| scale * v).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct RidgeProblem {
    n: usize,
    learn_noise: f64,
}

impl RidgeProblem {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_learn_noise(n, 0.0)
    }

    /// `learn_noise > 0` adds `N(0, learn_noise²)` to every learning gradient.
    pub fn with_learn_noise(n: usize, learn_noise: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Problem("ridge problem needs at least one agent".into()));
        }
        if !(learn_noise >= 0.0 && learn_noise.is_finite()) {
            return Err(Error::Problem(format!("learn_noise must be finite and >= 0, got {learn_noise}")));
        }
        Ok(Self { n, learn_noise })
    }

    pub fn learn_noise(&self) -> f64 {
        self.learn_noise
    }
}

impl CoupledProblem for RidgeProblem {
    fn agents(&self) -> usize {
        self.n
    }

    fn decision_dim(&self) -> usize {
        DIM
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn comp_grad<R: Rng + ?Sized>(&self, _agent: usize, x: &[f64], theta: &[f64], rng: &mut R, out: &mut [f64]) {
        let (u, v) = ridge_sample(rng);
        ridge_comp_grad(x, theta[0], &u, v, out);
    }

    fn learn_grad<R: Rng + ?Sized>(&self, agent: usize, theta: &[f64], rng: &mut R, out: &mut [f64]) {
        out[0] = ridge_learn_grad(agent, theta[0]);
        if self.learn_noise > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            out[0] += self.learn_noise * z;
        }
    }

    fn comp_grad_exact(&self, _agent: usize, x: &[f64], theta: &[f64], out: &mut [f64]) {
        // E[2u(uᵀx - v)] = 2 E[uuᵀ] (x - x̃) = (x - x̃) / 6
        for ((o, &xa), &ta) in out.iter_mut().zip(x).zip(&X_TILDE) {
            *o = 2.0 * FEATURE_VAR * (xa - ta) + 2.0 * theta[0] * xa;
        }
    }

    fn learn_grad_exact(&self, agent: usize, theta: &[f64], out: &mut [f64]) {
        out[0] = ridge_learn_grad(agent, theta[0]);
    }

    /// Constants evaluated at `θ = θ*`, where the expected Hessian in `x` is
    /// `(1/6 + 2θ*) I`.
    ///
    /// With `d = x - x̃`, the oracle error is `2(uuᵀ - I/12) d - 2uε`, whose
    /// second moment is `(2/15)‖d‖² + 1/60`. Splitting `d` around `x*` gives
    /// `σ_x² = (4/15)‖x* - x̃‖² + 1/60` and `M_x = 4 / (15 μ_x²)`.
    fn analytic_constants(&self) -> Option<AnalyticConstants> {
        let (x_star, theta_star) = ridge_optimum(self.n);
        let mu_x = 2.0 * FEATURE_VAR + 2.0 * theta_star;
        let offset: f64 = x_star.iter().zip(&X_TILDE).map(|(a, b)| (a - b) * (a - b)).sum();
        let noise_var = NOISE_STD * NOISE_STD;
        Some(AnalyticConstants {
            mu_x,
            l_x: mu_x,
            mu_theta: 2.0,
            l_theta: 2.0,
            m_x: 4.0 / (15.0 * mu_x * mu_x),
            m_theta: 0.0,
            sigma_x: ((4.0 / 15.0) * offset + 4.0 * noise_var * DIM as f64 * FEATURE_VAR).sqrt(),
            sigma_theta: self.learn_noise,
        })
    }

    fn optimum(&self) -> Option<Optimum> {
        let (x, theta) = ridge_optimum(self.n);
        Some(Optimum { x, theta: vec![theta] })
    }

    fn initial_point(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; DIM], vec![1.0])
    }

    fn name(&self) -> &'static str {
        "ridge"
    }
}
