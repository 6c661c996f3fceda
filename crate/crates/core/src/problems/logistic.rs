//! Regularized logistic regression over per-agent finite datasets.
//!
//! Agent `i` holds `m_i` samples `(x, l)` with `x = (1, z)`, `l ∈ {-1, +1}`,
//! and local objective `Σ_j ln(1 + exp(-l ηᵀx)) + θ/(2n) ‖η‖²`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{learning_optimum, learning_target, sigmoid, softplus, CoupledProblem, Optimum};
use crate::error::{Error, Result};
use crate::rng::{derive_key, CounterRng, StreamTag};

pub const DIM: usize = 3;
pub const DEFAULT_SAMPLES_PER_AGENT: usize = 200;
const POSITIVE_MEAN: [f64; 2] = [1.0, 0.0];
const NEGATIVE_MEAN: [f64; 2] = [0.0, 1.0];

const REFERENCE_TOL: f64 = 1e-10;
const REFERENCE_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample {
    pub x: [f64; DIM],
    pub label: f64,
}

/// Balanced synthetic dataset for one agent: `m/2` positives around `(1, 0)`
/// then `m/2` negatives around `(0, 1)`, identity covariance.
pub fn logistic_generate_data(agent: usize, m: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    if !m.is_multiple_of(2) {
        return Err(Error::Problem(format!("samples per agent must be even, got {m}")));
    }
    let mut rng = CounterRng::from_key(derive_key(&[seed, agent as u64, StreamTag::Dataset as u64]));
    let mut data = Vec::with_capacity(m);
    for (label, mean) in [(1.0, POSITIVE_MEAN), (-1.0, NEGATIVE_MEAN)] {
        for _ in 0..m / 2 {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            data.push(LabeledSample {
                x: [1.0, mean[0] + a, mean[1] + b],
                label,
            });
        }
    }
    Ok(data)
}

#[inline]
fn dot3(a: &[f64], b: &[f64; DIM]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Debug, Clone)]
pub struct LogisticProblem {
    datasets: Vec<Vec<LabeledSample>>,
    learn_noise: f64,
    eta_star: Vec<f64>,
}

impl LogisticProblem {
    /// Generates `n` datasets of `m` samples from `seed` and solves for the
    /// reference optimum at `θ*`.
    pub fn new(n: usize, m: usize, seed: u64) -> Result<Self> {
        let datasets = (0..n)
            .map(|i| logistic_generate_data(i, m, seed))
            .collect::<Result<Vec<_>>>()?;
        Self::from_datasets(datasets)
    }

    pub fn from_datasets(datasets: Vec<Vec<LabeledSample>>) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::Problem("logistic problem needs at least one agent".into()));
        }
        for (i, d) in datasets.iter().enumerate() {
            if d.is_empty() {
                return Err(Error::Problem(format!("agent {i} has an empty dataset")));
            }
            if let Some(s) = d.iter().find(|s| s.x[0] != 1.0 || (s.label != 1.0 && s.label != -1.0)) {
                return Err(Error::Problem(format!("agent {i} has a malformed sample {s:?}")));
            }
        }
        let mut problem = Self {
            datasets,
            learn_noise: 0.0,
            eta_star: Vec::new(),
        };
        problem.eta_star = problem.reference_optimum(learning_optimum(problem.agents()))?;
        Ok(problem)
    }

    pub fn with_learn_noise(mut self, learn_noise: f64) -> Result<Self> {
        if !(learn_noise >= 0.0 && learn_noise.is_finite()) {
            return Err(Error::Problem(format!("learn_noise must be finite and >= 0, got {learn_noise}")));
        }
        self.learn_noise = learn_noise;
        Ok(self)
    }

    pub fn dataset(&self, agent: usize) -> &[LabeledSample] {
        &self.datasets[agent]
    }

    /// `f_i(η, θ)`.
    pub fn local_objective(&self, agent: usize, eta: &[f64], theta: f64) -> f64 {
        let n = self.agents() as f64;
        let data: f64 = self.datasets[agent]
            .iter()
            .map(|s| softplus(-s.label * dot3(eta, &s.x)))
            .sum();
        data + theta / (2.0 * n) * eta.iter().map(|e| e * e).sum::<f64>()
    }

    /// `Σ_i ∇_η f_i(η, θ)`.
    pub fn pooled_gradient(&self, eta: &[f64], theta: f64) -> [f64; DIM] {
        let mut total = [0.0; DIM];
        let mut g = [0.0; DIM];
        for i in 0..self.agents() {
            self.comp_grad_exact(i, eta, &[theta], &mut g);
            for (t, v) in total.iter_mut().zip(g) {
                *t += v;
            }
        }
        total
    }

    /// Minimizer of the pooled objective `Σ_i f_i(η, θ)` by full-gradient
    /// descent with step `1/L`, `L = ¼ Σ‖x‖² + θ`.
    pub fn reference_optimum(&self, theta: f64) -> Result<Vec<f64>> {
        if !(theta > 0.0) {
            return Err(Error::Problem(format!("reference optimum needs θ > 0, got {theta}")));
        }
        let lipschitz = 0.25
            * self
                .datasets
                .iter()
                .flatten()
                .map(|s| s.x.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
            + theta;
        let step = 1.0 / lipschitz;
        let mut eta = [0.0; DIM];
        for _ in 0..REFERENCE_MAX_ITER {
            let g = self.pooled_gradient(&eta, theta);
            if g.iter().map(|v| v * v).sum::<f64>().sqrt() < REFERENCE_TOL {
                return Ok(eta.to_vec());
            }
            for (e, gv) in eta.iter_mut().zip(g) {
                *e -= step * gv;
            }
        }
        Err(Error::Problem(format!(
            "reference optimum did not reach gradient norm {REFERENCE_TOL:e} in {REFERENCE_MAX_ITER} iterations"
        )))
    }
}

impl CoupledProblem for LogisticProblem {
    fn agents(&self) -> usize {
        self.datasets.len()
    }

    fn decision_dim(&self) -> usize {
        DIM
    }

    fn param_dim(&self) -> usize {
        1
    }

    /// Samples one index uniformly and scales its gradient by `m_i`, which
    /// keeps the draw unbiased for the local sum objective.
    fn comp_grad<R: Rng + ?Sized>(&self, agent: usize, eta: &[f64], theta: &[f64], rng: &mut R, out: &mut [f64]) {
        let data = &self.datasets[agent];
        let m = data.len();
        let s = &data[rng.random_range(0..m)];
        let coef = -(m as f64) * s.label * sigmoid(-s.label * dot3(eta, &s.x));
        let reg = theta[0] / self.agents() as f64;
        for ((o, &xa), &ea) in out.iter_mut().zip(&s.x).zip(eta) {
            *o = coef * xa + reg * ea;
        }
    }

    fn learn_grad<R: Rng + ?Sized>(&self, agent: usize, theta: &[f64], rng: &mut R, out: &mut [f64]) {
        out[0] = 2.0 * (theta[0] - learning_target(agent));
        if self.learn_noise > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            out[0] += self.learn_noise * z;
        }
    }

    fn comp_grad_exact(&self, agent: usize, eta: &[f64], theta: &[f64], out: &mut [f64]) {
        let reg = theta[0] / self.agents() as f64;
        for (o, &e) in out.iter_mut().zip(eta) {
            *o = reg * e;
        }
        for s in &self.datasets[agent] {
            let coef = -s.label * sigmoid(-s.label * dot3(eta, &s.x));
            for (o, &xa) in out.iter_mut().zip(&s.x) {
                *o += coef * xa;
            }
        }
    }

    fn learn_grad_exact(&self, agent: usize, theta: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * (theta[0] - learning_target(agent));
    }

    fn optimum(&self) -> Option<Optimum> {
        Some(Optimum {
            x: self.eta_star.clone(),
            theta: vec![learning_optimum(self.agents())],
        })
    }

    fn name(&self) -> &'static str {
        "logistic"
    }
}
