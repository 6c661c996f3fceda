//! Coupled problems: a computational objective `f_i(x, θ)` and a learning
//! objective `h_i(θ)` per agent, each reachable only through a stochastic
//! first-order oracle.

mod logistic;
mod ridge;
mod validate;

use rand::Rng;

pub use logistic::{logistic_generate_data, LabeledSample, LogisticProblem, DEFAULT_SAMPLES_PER_AGENT};
pub use ridge::{ridge_comp_grad, ridge_learn_grad, ridge_optimum, ridge_sample, RidgeProblem, X_TILDE};
pub use validate::{validate_assumptions, PointReport, ValidationReport};

/// Learning targets `α_i = 0.01 (i + 1)` shared by both experiments
/// (agent indices are 0-based).
pub fn learning_target(agent: usize) -> f64 {
    0.01 * (agent + 1) as f64
}

/// Minimizer of `Σ_i (θ - α_i)²`, i.e. the mean of the learning targets.
pub fn learning_optimum(n: usize) -> f64 {
    0.005 * (n + 1) as f64
}

/// Strong convexity, smoothness and oracle-variance constants.
///
/// Variance bounds read `E‖g - ∇f‖² ≤ σ² + M ‖∇f‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticConstants {
    pub mu_x: f64,
    pub l_x: f64,
    pub mu_theta: f64,
    pub l_theta: f64,
    pub m_x: f64,
    pub m_theta: f64,
    pub sigma_x: f64,
    pub sigma_theta: f64,
}

/// Joint solution `(x*, θ*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
}

pub trait CoupledProblem: Sync {
    /// Number of agents.
    fn agents(&self) -> usize;
    /// Dimension `p` of the decision variable.
    fn decision_dim(&self) -> usize;
    /// Dimension `q` of the learned parameter.
    fn param_dim(&self) -> usize;

    /// One draw of `g_i(x, θ, ξ)` written into `out` (length `p`).
    fn comp_grad<R: Rng + ?Sized>(&self, agent: usize, x: &[f64], theta: &[f64], rng: &mut R, out: &mut [f64]);

    /// One draw of `φ_i(θ, ζ)` written into `out` (length `q`).
    fn learn_grad<R: Rng + ?Sized>(&self, agent: usize, theta: &[f64], rng: &mut R, out: &mut [f64]);

    /// `∇_x f_i(x, θ)`, the expectation of [`CoupledProblem::comp_grad`].
    fn comp_grad_exact(&self, agent: usize, x: &[f64], theta: &[f64], out: &mut [f64]);

    /// `∇ h_i(θ)`, the expectation of [`CoupledProblem::learn_grad`].
    fn learn_grad_exact(&self, agent: usize, theta: &[f64], out: &mut [f64]);

    fn analytic_constants(&self) -> Option<AnalyticConstants> {
        None
    }

    fn optimum(&self) -> Option<Optimum> {
        None
    }

    /// Starting point `(x_i(0), θ_i(0))` shared by every agent.
    fn initial_point(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; self.decision_dim()], vec![0.0; self.param_dim()])
    }

    fn name(&self) -> &'static str;
}

/// Numerically stable logistic function.
#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
