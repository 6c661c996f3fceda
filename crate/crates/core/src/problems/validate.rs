//! Monte Carlo checks of the oracle moment conditions: unbiasedness and a
//! variance bound of the form `σ² + M‖∇f‖²`.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use super::CoupledProblem;
use crate::rng::{derive_key, CounterRng, StreamTag};

/// A point is flagged when its unbiasedness gap exceeds this many standard errors.
pub const FLAG_SIGMAS: f64 = 4.0;

/// Moments of one oracle at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleMoments {
    /// `‖mean(draws) - exact‖`.
    pub gap: f64,
    /// Standard error of that gap: `sqrt(tr Cov / draws)`.
    pub std_error: f64,
    /// Empirical `E‖g - ∇f‖²`.
    pub variance: f64,
    /// `‖∇f‖²` at the point.
    pub grad_sq: f64,
}

impl OracleMoments {
    pub fn biased(&self) -> bool {
        self.gap > FLAG_SIGMAS * self.std_error + 1e-12 * (1.0 + self.grad_sq.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointReport {
    pub agent: usize,
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub comp: OracleMoments,
    pub learn: OracleMoments,
}

impl PointReport {
    pub fn flagged(&self) -> bool {
        self.comp.biased() || self.learn.biased()
    }
}

/// Least-squares fit `variance ≈ σ² + M ‖∇f‖²` across points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceFit {
    pub sigma_sq: f64,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub problem: &'static str,
    pub draws: usize,
    pub points: Vec<PointReport>,
    pub comp_fit: VarianceFit,
    pub learn_fit: VarianceFit,
}

impl ValidationReport {
    pub fn flagged(&self) -> Vec<usize> {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.flagged())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.flagged().is_empty() && self.comp_fit.sigma_sq.is_finite() && self.comp_fit.m.is_finite()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "problem: {} ({} draws per point)", self.problem, self.draws)?;
        writeln!(
            f,
            "{:>5} {:>5} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}  flag",
            "point", "agent", "comp_gap", "comp_se", "comp_var", "learn_gap", "learn_se", "learn_var"
        )?;
        for (i, p) in self.points.iter().enumerate() {
            writeln!(
                f,
                "{:>5} {:>5} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}  {}",
                i,
                p.agent,
                p.comp.gap,
                p.comp.std_error,
                p.comp.variance,
                p.learn.gap,
                p.learn.std_error,
                p.learn.variance,
                if p.flagged() { "BIASED" } else { "ok" }
            )?;
        }
        writeln!(
            f,
            "computational oracle: sigma^2 = {:.6e}, M = {:.6e}",
            self.comp_fit.sigma_sq, self.comp_fit.m
        )?;
        writeln!(
            f,
            "learning oracle:      sigma^2 = {:.6e}, M = {:.6e}",
            self.learn_fit.sigma_sq, self.learn_fit.m
        )?;
        write!(
            f,
            "result: {}",
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn moments(exact: &[f64], draws: usize, mut sample: impl FnMut(&mut [f64])) -> OracleMoments {
    let d = exact.len();
    let mut g = vec![0.0; d];
    let mut sum = vec![0.0; d];
    let mut sum_sq_dev = 0.0;
    let mut sum_dev_sq_per_coord = vec![0.0; d];
    for _ in 0..draws {
        sample(&mut g);
        for a in 0..d {
            let dev = g[a] - exact[a];
            sum[a] += dev;
            sum_dev_sq_per_coord[a] += dev * dev;
            sum_sq_dev += dev * dev;
        }
    }
    let nd = draws as f64;
    let gap = sum.iter().map(|s| (s / nd).powi(2)).sum::<f64>().sqrt();
    // Sample covariance trace around the empirical mean.
    let trace_cov: f64 = (0..d)
        .map(|a| {
            let mean = sum[a] / nd;
            (sum_dev_sq_per_coord[a] / nd - mean * mean) * nd / (nd - 1.0).max(1.0)
        })
        .sum();
    OracleMoments {
        gap,
        std_error: (trace_cov.max(0.0) / nd).sqrt(),
        variance: sum_sq_dev / nd,
        grad_sq: exact.iter().map(|v| v * v).sum(),
    }
}

fn fit_variance(points: &[(f64, f64)]) -> VarianceFit {
    let n = points.len() as f64;
    if points.is_empty() {
        return VarianceFit { sigma_sq: 0.0, m: 0.0 };
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= f64::EPSILON * (1.0 + mx * mx) {
        return VarianceFit { sigma_sq: my, m: 0.0 };
    }
    let m = sxy / sxx;
    VarianceFit {
        sigma_sq: my - m * mx,
        m,
    }
}

/// Draws `draws` oracle samples at each of `points` random `(x, θ)` points
/// and compares their mean with the exact gradient.
///
/// Points are spread around the known optimum when the problem has one
/// (standard normal offsets in `x`, uniform ±0.5 in `θ`); otherwise around
/// the origin.
pub fn validate_assumptions<P: CoupledProblem>(problem: &P, points: usize, draws: usize, seed: u64) -> ValidationReport {
    let (p, q) = (problem.decision_dim(), problem.param_dim());
    let (x_center, theta_center) = match problem.optimum() {
        Some(o) => (o.x, o.theta),
        None => (vec![0.0; p], vec![0.5; q]),
    };
    let mut reports = Vec::with_capacity(points);
    for point in 0..points {
        let mut rng = CounterRng::from_key(derive_key(&[seed, point as u64, StreamTag::Validation as u64]));
        let agent = point % problem.agents();
        let x: Vec<f64> = x_center
            .iter()
            .map(|c| c + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let theta: Vec<f64> = theta_center
            .iter()
            .map(|c| c + rng.random::<f64>() - 0.5)
            .collect();

        let mut exact_x = vec![0.0; p];
        problem.comp_grad_exact(agent, &x, &theta, &mut exact_x);
        let mut exact_t = vec![0.0; q];
        problem.learn_grad_exact(agent, &theta, &mut exact_t);

        let comp = moments(&exact_x, draws, |g| problem.comp_grad(agent, &x, &theta, &mut rng, g));
        let learn = moments(&exact_t, draws, |g| problem.learn_grad(agent, &theta, &mut rng, g));
        reports.push(PointReport {
            agent,
            x,
            theta,
            comp,
            learn,
        });
    }
    let comp_fit = fit_variance(&reports.iter().map(|r| (r.comp.grad_sq, r.comp.variance)).collect::<Vec<_>>());
    let learn_fit = fit_variance(&reports.iter().map(|r| (r.learn.grad_sq, r.learn.variance)).collect::<Vec<_>>());
    ValidationReport {
        problem: problem.name(),
        draws,
        points: reports,
        comp_fit,
        learn_fit,
    }
}
