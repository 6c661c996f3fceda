//! Property checks shared by the `invariants` tests and the acceptance runner.
//! Each check returns `Err` with a short diagnostic instead of panicking.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use std::sync::Mutex;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use cdsa::cdsa::{compute_k, mix_phase, run, sgd_phase, Schedule, StepsizePolicy, SwarmState};
use cdsa::harness::{Experiment, ExperimentConfig};
use cdsa::metrics::{
    compute_k1, crossover, errors_at, fit_loglog, transient_bound, Metric, RunTrace, TraceMeta, TraceRecorder,
};
use cdsa::network::{metropolis_weights, Topology, TopologyKind, WeightMatrix};
use cdsa::problems::{
    learning_optimum, learning_target, ridge_comp_grad, validate_assumptions, CoupledProblem, LabeledSample,
    LogisticProblem, Optimum, RidgeProblem,
};
use cdsa::rng::{CounterRng, StreamTag};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn weights(kind: TopologyKind, n: usize) -> WeightMatrix {
    metropolis_weights(&Topology::build(kind, n).unwrap()).unwrap()
}

/// Closest-to-square factorization `rows x cols` with `rows <= cols`.
pub fn mesh_dims(n: usize) -> (usize, usize) {
    let rows = (1..=n).take_while(|r| r * r <= n).filter(|r| n.is_multiple_of(*r)).last().unwrap();
    (rows, n / rows)
}

pub fn families(n: usize) -> Vec<TopologyKind> {
    let (rows, cols) = mesh_dims(n);
    let mut out = vec![TopologyKind::Path, TopologyKind::Complete, TopologyKind::Mesh2D { rows, cols }];
    if n >= 3 {
        out.push(TopologyKind::Cycle);
    }
    out
}

/// `max |λ|` of `W - 11ᵀ/n` from a dense symmetric eigendecomposition.
pub fn eig_rho(w: &Array2<f64>) -> f64 {
    let n = w.nrows();
    let b = DMatrix::from_fn(n, n, |i, j| w[[i, j]] - 1.0 / n as f64);
    SymmetricEigen::new(b).eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn disagreement(x: &Array2<f64>) -> f64 {
    let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
    (x - &mean).iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(PropConfig {
        cases,
        failure_persistence: None,
        ..PropConfig::default()
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn random_matrix(rng: &mut StdRng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-5.0..5.0))
}

// ---------------------------------------------------------------- network

pub fn double_stochasticity() -> Check {
    for n in 2..=64 {
        for kind in families(n) {
            let w = weights(kind.clone(), n);
            let m = w.matrix();
            for i in 0..n {
                let row: f64 = m.row(i).sum();
                let col: f64 = m.column(i).sum();
                ensure!((row - 1.0).abs() <= 1e-12, "{} n={n}: row {i} sums to {row}", kind.name());
                ensure!((col - 1.0).abs() <= 1e-12, "{} n={n}: column {i} sums to {col}", kind.name());
            }
        }
    }
    Ok(())
}

pub fn spectral_radius_matches_eigensolver() -> Check {
    let w3 = weights(TopologyKind::Path, 3);
    ensure!((w3.rho_w() - 2.0 / 3.0).abs() < 1e-10, "path n=3: rho_w = {}", w3.rho_w());
    for n in [2, 3, 5, 8, 10, 16, 25, 36, 64] {
        for kind in families(n) {
            let w = weights(kind.clone(), n);
            let exact = eig_rho(w.matrix());
            ensure!(
                (w.rho_w() - exact).abs() < 1e-8,
                "{} n={n}: power iteration {} vs eigensolver {exact}",
                kind.name(),
                w.rho_w()
            );
        }
    }
    Ok(())
}

pub fn consensus_contraction_and_average() -> Check {
    let mut rng = StdRng::seed_from_u64(17);
    let cases = [
        (TopologyKind::Path, 10),
        (TopologyKind::Cycle, 12),
        (TopologyKind::Mesh2D { rows: 4, cols: 4 }, 16),
        (TopologyKind::Complete, 8),
        (TopologyKind::Path, 25),
    ];
    for (kind, n) in cases {
        let w = weights(kind.clone(), n);
        for trial in 0..100 {
            let p = 1 + trial % 6;
            let omega = random_matrix(&mut rng, n, p);
            let mixed = w.matrix().dot(&omega);
            let before = disagreement(&omega);
            let after = disagreement(&mixed);
            ensure!(
                after <= w.rho_w() * before + 1e-9,
                "{} n={n}: {after} > {} * {before}",
                kind.name(),
                w.rho_w()
            );
            let m0 = omega.mean_axis(ndarray::Axis(0)).unwrap();
            let m1 = mixed.mean_axis(ndarray::Axis(0)).unwrap();
            for (a, b) in m0.iter().zip(&m1) {
                ensure!((a - b).abs() <= 1e-12, "{} n={n}: column mean moved {a} -> {b}", kind.name());
            }
        }
    }
    Ok(())
}

fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn gap_scaling() -> Check {
    let slope = |kind: fn(usize) -> TopologyKind, ns: &[usize]| {
        let gaps: Vec<f64> = ns.iter().map(|&n| 1.0 - weights(kind(n), n).rho_w()).collect();
        let pts: Vec<(f64, f64)> = ns.iter().zip(&gaps).map(|(&n, g)| ((n as f64).ln(), g.ln())).collect();
        ols_slope(&pts)
    };
    let path = slope(|_| TopologyKind::Path, &[8, 16, 32, 64]);
    ensure!((-2.3..=-1.7).contains(&path), "path gap slope {path}");
    let mesh = slope(
        |n| {
            let (rows, cols) = mesh_dims(n);
            TopologyKind::Mesh2D { rows, cols }
        },
        &[9, 16, 36, 64],
    );
    ensure!((-1.4..=-0.6).contains(&mesh), "mesh gap slope {mesh}");
    Ok(())
}

/// Random connected graphs: spanning tree plus extra edges.
fn connected_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..20).prop_flat_map(|n| {
        let tree = proptest::collection::vec(any::<prop::sample::Index>(), n - 1);
        let extra = proptest::collection::vec((0..n, 0..n), 0..2 * n);
        (Just(n), tree, extra).prop_map(|(n, tree, extra)| {
            let mut edges: Vec<(usize, usize)> = tree.iter().enumerate().map(|(i, ix)| (i + 1, ix.index(i + 1))).collect();
            edges.extend(extra.into_iter().filter(|(a, b)| a != b));
            (n, edges)
        })
    })
}

pub fn random_graph_weights() -> Check {
    let mut runner = runner(128);
    runner
        .run(&(connected_graph(), any::<u64>()), |((n, edges), seed)| {
            let t = Topology::build(TopologyKind::Custom { edges }, n).unwrap();
            let w = metropolis_weights(&t).unwrap();
            let m = w.matrix();
            for i in 0..n {
                prop_assert!((m.row(i).sum() - 1.0).abs() <= 1e-12);
                for j in 0..n {
                    prop_assert_eq!(m[[i, j]], m[[j, i]]);
                    if i != j {
                        prop_assert_eq!(t.neighbors(i).contains(&j), m[[i, j]] > 0.0);
                    }
                }
            }
            prop_assert!((w.rho_w() - eig_rho(m)).abs() < 1e-8);
            prop_assert!(w.rho_w() < 1.0);
            let mut rng = StdRng::seed_from_u64(seed);
            let omega = random_matrix(&mut rng, n, 3);
            prop_assert!(disagreement(&m.dot(&omega)) <= w.rho_w() * disagreement(&omega) + 1e-9);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- problems

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|a| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[a] += h;
            lo[a] -= h;
            (f(&hi) - f(&lo)) / (2.0 * h)
        })
        .collect()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(1.0)
}

pub fn finite_difference_gradients() -> Check {
    let mut rng = StdRng::seed_from_u64(23);
    for point in 0..20 {
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-5.0..5.0)).collect();
        let u: Vec<f64> = (0..5).map(|_| rng.random_range(-0.5..0.5)).collect();
        let v = rng.random_range(-10.0..10.0);
        let theta = rng.random_range(0.0..1.0);
        let loss = |x: &[f64]| {
            let r: f64 = u.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - v;
            r * r + theta * x.iter().map(|a| a * a).sum::<f64>()
        };
        let mut g = vec![0.0; 5];
        ridge_comp_grad(&x, theta, &u, v, &mut g);
        let err = relative_error(&g, &central_difference(loss, &x, 1e-6));
        ensure!(err < 1e-5, "ridge point {point}: relative error {err}");
    }
    for point in 0..20 {
        // one-sample dataset, so the stochastic oracle always returns that sample's gradient
        let sample = LabeledSample {
            x: [1.0, rng.random_range(-2.0..3.0), rng.random_range(-2.0..3.0)],
            label: if point % 2 == 0 { 1.0 } else { -1.0 },
        };
        let problem = LogisticProblem::from_datasets(vec![vec![sample], vec![sample]]).unwrap();
        let eta: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let theta = rng.random_range(0.0..1.0);
        let mut g = vec![0.0; 3];
        problem.comp_grad(0, &eta, &[theta], &mut CounterRng::from_key(point), &mut g);
        let numeric = central_difference(|e| problem.local_objective(0, e, theta), &eta, 1e-6);
        let err = relative_error(&g, &numeric);
        ensure!(err < 1e-5, "logistic point {point}: relative error {err}");
    }
    Ok(())
}

pub fn ridge_strong_monotonicity() -> Check {
    let problem = RidgeProblem::new(10).unwrap();
    let mut rng = StdRng::seed_from_u64(29);
    for _ in 0..200 {
        let theta = rng.random_range(0.0..2.0);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..5).map(|_| rng.random_range(-10.0..10.0)).collect();
        let (mut gx, mut gy) = (vec![0.0; 5], vec![0.0; 5]);
        problem.comp_grad_exact(0, &x, &[theta], &mut gx);
        problem.comp_grad_exact(0, &y, &[theta], &mut gy);
        let inner: f64 = (0..5).map(|a| (gy[a] - gx[a]) * (y[a] - x[a])).sum();
        let dist_sq: f64 = (0..5).map(|a| (y[a] - x[a]).powi(2)).sum();
        let mu = 1.0 / 6.0 + 2.0 * theta;
        ensure!(inner >= mu * dist_sq - 1e-9 * (1.0 + dist_sq), "{inner} < {mu} * {dist_sq}");
    }
    Ok(())
}

pub fn learning_step_contraction() -> Check {
    let problem = RidgeProblem::new(10).unwrap();
    let mut rng = StdRng::seed_from_u64(31);
    for _ in 0..200 {
        let agent = rng.random_range(0..10);
        let step = rng.random_range(0.001..0.999);
        let theta = rng.random_range(-3.0..3.0);
        let mut g = [0.0];
        problem.learn_grad_exact(agent, &[theta], &mut g);
        let next = theta - step * g[0];
        let target = learning_target(agent);
        let lhs = (next - target).abs();
        let rhs = (1.0 - 2.0 * step).abs() * (theta - target).abs();
        ensure!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs), "agent {agent}, step {step}: {lhs} vs {rhs}");
    }
    Ok(())
}

/// Oracle returning the exact gradient plus one in every coordinate.
pub struct Biased<P>(pub P);

impl<P: CoupledProblem> CoupledProblem for Biased<P> {
    fn agents(&self) -> usize {
        self.0.agents()
    }
    fn decision_dim(&self) -> usize {
        self.0.decision_dim()
    }
    fn param_dim(&self) -> usize {
        self.0.param_dim()
    }
    fn comp_grad<R: Rng + ?Sized>(&self, agent: usize, x: &[f64], theta: &[f64], rng: &mut R, out: &mut [f64]) {
        self.0.comp_grad(agent, x, theta, rng, out);
        out.iter_mut().for_each(|o| *o += 1.0);
    }
    fn learn_grad<R: Rng + ?Sized>(&self, agent: usize, theta: &[f64], rng: &mut R, out: &mut [f64]) {
        self.0.learn_grad(agent, theta, rng, out)
    }
    fn comp_grad_exact(&self, agent: usize, x: &[f64], theta: &[f64], out: &mut [f64]) {
        self.0.comp_grad_exact(agent, x, theta, out)
    }
    fn learn_grad_exact(&self, agent: usize, theta: &[f64], out: &mut [f64]) {
        self.0.learn_grad_exact(agent, theta, out)
    }
    fn optimum(&self) -> Option<Optimum> {
        self.0.optimum()
    }
    fn name(&self) -> &'static str {
        "biased"
    }
}

pub fn oracle_moments() -> Check {
    let ridge = RidgeProblem::new(10).unwrap();
    let report = validate_assumptions(&ridge, 10, 100_000, 3);
    ensure!(report.passed(), "ridge flagged at points {:?}\n{report}", report.flagged());
    for p in &report.points {
        ensure!(p.learn.variance == 0.0, "deterministic learning oracle has variance {}", p.learn.variance);
    }
    ensure!(report.learn_fit.sigma_sq == 0.0, "learning sigma^2 = {}", report.learn_fit.sigma_sq);
    ensure!(report.comp_fit.sigma_sq > 0.0 && report.comp_fit.m.is_finite(), "comp fit {:?}", report.comp_fit);

    let noisy = RidgeProblem::with_learn_noise(10, 0.3).unwrap();
    let report = validate_assumptions(&noisy, 5, 50_000, 4);
    ensure!(report.passed(), "noisy learning oracle flagged\n{report}");
    ensure!((report.learn_fit.sigma_sq - 0.09).abs() < 0.01, "learning sigma^2 = {}", report.learn_fit.sigma_sq);

    let biased = validate_assumptions(&Biased(RidgeProblem::new(10).unwrap()), 3, 20_000, 5);
    ensure!(biased.flagged().len() == 3, "biased oracle flagged at {:?} only", biased.flagged());

    let logistic = LogisticProblem::new(4, 40, 1).unwrap();
    let report = validate_assumptions(&logistic, 8, 50_000, 6);
    ensure!(report.passed(), "logistic flagged at {:?}\n{report}", report.flagged());
    Ok(())
}

pub fn oracles_are_deterministic() -> Check {
    let ridge = RidgeProblem::new(4).unwrap();
    let logistic = LogisticProblem::new(4, 20, 2).unwrap();
    for agent in 0..4 {
        let draw = |p: &dyn Fn(&mut CounterRng, &mut [f64]), len: usize| {
            let mut rng = CounterRng::for_draw(99, agent, 7, StreamTag::Computational);
            let mut out = vec![0.0; len];
            p(&mut rng, &mut out);
            out.iter().map(|v| v.to_bits()).collect::<Vec<u64>>()
        };
        let r = |rng: &mut CounterRng, out: &mut [f64]| ridge.comp_grad(agent, &[1.0; 5], &[0.2], rng, out);
        let l = |rng: &mut CounterRng, out: &mut [f64]| logistic.comp_grad(agent, &[0.1; 3], &[0.2], rng, out);
        ensure!(draw(&r, 5) == draw(&r, 5), "ridge oracle not reproducible");
        ensure!(draw(&l, 3) == draw(&l, 3), "logistic oracle not reproducible");
    }
    Ok(())
}

// ---------------------------------------------------------------- cdsa

/// Remembers every computational gradient it hands out.
pub struct Instrumented<P> {
    pub inner: P,
    pub drawn: Mutex<Vec<(usize, Vec<f64>)>>,
}

impl<P: CoupledProblem> CoupledProblem for Instrumented<P> {
    fn agents(&self) -> usize {
        self.inner.agents()
    }
    fn decision_dim(&self) -> usize {
        self.inner.decision_dim()
    }
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn comp_grad<R: Rng + ?Sized>(&self, agent: usize, x: &[f64], theta: &[f64], rng: &mut R, out: &mut [f64]) {
        self.inner.comp_grad(agent, x, theta, rng, out);
        self.drawn.lock().unwrap().push((agent, out.to_vec()));
    }
    fn learn_grad<R: Rng + ?Sized>(&self, agent: usize, theta: &[f64], rng: &mut R, out: &mut [f64]) {
        self.inner.learn_grad(agent, theta, rng, out)
    }
    fn comp_grad_exact(&self, agent: usize, x: &[f64], theta: &[f64], out: &mut [f64]) {
        self.inner.comp_grad_exact(agent, x, theta, out)
    }
    fn learn_grad_exact(&self, agent: usize, theta: &[f64], out: &mut [f64]) {
        self.inner.learn_grad_exact(agent, theta, out)
    }
    fn initial_point(&self) -> (Vec<f64>, Vec<f64>) {
        self.inner.initial_point()
    }
    fn name(&self) -> &'static str {
        "instrumented"
    }
}

/// Oracle replaced by the exact expected gradient.
pub struct Exact<P>(pub P);

impl<P: CoupledProblem> CoupledProblem for Exact<P> {
    fn agents(&self) -> usize {
        self.0.agents()
    }
    fn decision_dim(&self) -> usize {
        self.0.decision_dim()
    }
    fn param_dim(&self) -> usize {
        self.0.param_dim()
    }
    fn comp_grad<R: Rng + ?Sized>(&self, agent: usize, x: &[f64], theta: &[f64], _rng: &mut R, out: &mut [f64]) {
        self.0.comp_grad_exact(agent, x, theta, out)
    }
    fn learn_grad<R: Rng + ?Sized>(&self, agent: usize, theta: &[f64], _rng: &mut R, out: &mut [f64]) {
        self.0.learn_grad_exact(agent, theta, out)
    }
    fn comp_grad_exact(&self, agent: usize, x: &[f64], theta: &[f64], out: &mut [f64]) {
        self.0.comp_grad_exact(agent, x, theta, out)
    }
    fn learn_grad_exact(&self, agent: usize, theta: &[f64], out: &mut [f64]) {
        self.0.learn_grad_exact(agent, theta, out)
    }
    fn name(&self) -> &'static str {
        "exact"
    }
}

fn column_mean(x: &Array2<f64>) -> Vec<f64> {
    x.mean_axis(ndarray::Axis(0)).unwrap().to_vec()
}

pub fn average_recursion() -> Check {
    let n = 10;
    let problem = Instrumented {
        inner: RidgeProblem::new(n).unwrap(),
        drawn: Mutex::new(Vec::new()),
    };
    let w = weights(TopologyKind::Path, n);
    let policy = StepsizePolicy::explicit(20.0, 20.0).unwrap();
    let mut state = SwarmState::initial(&problem);
    for _ in 0..300 {
        let (alpha, gamma) = policy.stepsizes(state.k);
        problem.drawn.lock().unwrap().clear();
        let before = column_mean(&state.x);
        let local = sgd_phase(&state, &problem, alpha, gamma, 41).map_err(|e| e.to_string())?;
        let next = mix_phase(&w, &local).map_err(|e| e.to_string())?;
        let drawn = problem.drawn.lock().unwrap();
        ensure!(drawn.len() == n, "expected {n} gradient draws, saw {}", drawn.len());
        let mut g_bar = [0.0; 5];
        for (_, g) in drawn.iter() {
            for (acc, v) in g_bar.iter_mut().zip(g) {
                *acc += v / n as f64;
            }
        }
        let after = column_mean(&next.x);
        for a in 0..5 {
            let expected = before[a] - alpha * g_bar[a];
            ensure!(
                (after[a] - expected).abs() <= 1e-12 * (1.0 + expected.abs()),
                "k={}: mean[{a}] = {} vs {expected}",
                state.k,
                after[a]
            );
        }
        state = next;
    }
    Ok(())
}

pub fn live_mixing_contraction() -> Check {
    for (kind, n) in [(TopologyKind::Path, 10), (TopologyKind::Cycle, 25), (TopologyKind::Mesh2D { rows: 3, cols: 4 }, 12)] {
        let problem = RidgeProblem::new(n).unwrap();
        let w = weights(kind.clone(), n);
        let policy = StepsizePolicy::explicit(20.0, 20.0).unwrap();
        let mut state = SwarmState::initial(&problem);
        for _ in 0..2000 {
            let (alpha, gamma) = policy.stepsizes(state.k);
            let local = sgd_phase(&state, &problem, alpha, gamma, 43).map_err(|e| e.to_string())?;
            let next = mix_phase(&w, &local).map_err(|e| e.to_string())?;
            for (mixed, raw, what) in [(&next.x, &local.x, "x"), (&next.theta, &local.theta, "theta")] {
                let (after, before) = (disagreement(mixed), disagreement(raw));
                ensure!(
                    after <= w.rho_w() * before + 1e-9,
                    "{} k={}: {what} disagreement {after} > {} * {before}",
                    kind.name(),
                    state.k,
                    w.rho_w()
                );
            }
            state = next;
        }
    }
    Ok(())
}

pub fn deterministic_contraction() -> Check {
    let n = 6;
    let problem = Exact(RidgeProblem::new(n).unwrap());
    let opt = RidgeProblem::new(n).unwrap().optimum().unwrap();
    let theta_star = learning_optimum(n);
    let mu = 1.0 / 6.0 + 2.0 * theta_star;
    let w = weights(TopologyKind::Complete, n);
    let mut rng = StdRng::seed_from_u64(47);
    for _ in 0..100 {
        let x0: Vec<f64> = (0..5).map(|a| opt.x[a] + rng.random_range(-10.0..10.0)).collect();
        let state = SwarmState::consensual(n, &x0, &[theta_star]);
        let alpha = rng.random_range(0.01..0.99) * 2.0 / mu;
        let next = mix_phase(&w, &sgd_phase(&state, &problem, alpha, 0.1, 0).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let dist = |x: &[f64]| norm(&x.iter().zip(&opt.x).map(|(a, b)| a - b).collect::<Vec<_>>());
        let lambda = (1.0 - alpha * mu).abs();
        let (d0, d1) = (dist(&x0), dist(&column_mean(&next.x)));
        ensure!(d1 <= lambda * d0 + 1e-9, "alpha {alpha}: {d1} > {lambda} * {d0}");
    }
    Ok(())
}

pub fn config(problem: &str, topology: &str, k_max: usize, paths: usize) -> ExperimentConfig {
    let (kind, n) = topology.split_once(':').unwrap();
    let topo = match kind {
        "mesh2d" => {
            let (r, c) = n.split_once('x').unwrap();
            format!("kind = \"mesh2d\"\nrows = {r}\ncols = {c}\n")
        }
        _ => format!("kind = \"{kind}\"\nn = {n}\n"),
    };
    let text = format!(
        "[problem]\nkind = \"{problem}\"\n[topology]\n{topo}[run]\nk_max = {k_max}\npaths = {paths}\nmaster_seed = 11\n"
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}

pub fn uniform_boundedness() -> Check {
    for (problem, topology, k_max, paths) in [
        ("ridge", "path:10", 2000, 8),
        ("ridge", "path:25", 2000, 4),
        ("logistic", "path:25", 1000, 4),
        ("logistic", "complete:25", 1000, 4),
    ] {
        let trace = Experiment::new(&config(problem, topology, k_max, paths))
            .and_then(|e| e.monte_carlo())
            .map_err(|e| e.to_string())?;
        check_bounded(&trace)?;
    }
    Ok(())
}

pub fn check_bounded(trace: &RunTrace) -> Check {
    let label = format!("{} {}", trace.meta.problem, trace.meta.topology);
    ensure!(
        trace.max_dev_x.is_finite() && trace.max_dev_x < 1e3,
        "{label}: max |x_i - x*| = {}",
        trace.max_dev_x
    );
    ensure!(
        trace.max_dev_theta.is_finite() && trace.max_dev_theta < 1e3,
        "{label}: max |theta_i - theta*| = {}",
        trace.max_dev_theta
    );
    Ok(())
}

pub fn stepsize_policies() -> Check {
    let mut runner = runner(256);
    let explicit = (0.01f64..100.0, 0.01f64..100.0, 0usize..100_000);
    runner
        .run(&explicit, |(a, b, k)| {
            let p = StepsizePolicy::explicit(a, b).unwrap();
            let (s0, t0) = p.stepsizes(k);
            let (s1, t1) = p.stepsizes(k + 1);
            prop_assert!(s0 > 0.0 && t0 > 0.0 && s1 <= s0 && t1 <= t0);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let harmonic = (2.001f64..20.0, 1u64..1000, 0.01f64..10.0, 0.01f64..10.0, 0usize..100_000);
    runner
        .run(&harmonic, |(beta, k_off, mx, mt, k)| {
            let p = StepsizePolicy::harmonic(beta, k_off, mx, mt).unwrap();
            let (s0, t0) = p.stepsizes(k);
            let (s1, t1) = p.stepsizes(k + 1);
            prop_assert!(s0 > 0.0 && t0 > 0.0 && s1 <= s0 && t1 <= t0);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    ensure!(StepsizePolicy::harmonic(2.0, 10, 1.0, 1.0).is_err(), "beta = 2 accepted");
    ensure!(StepsizePolicy::harmonic(1.5, 10, 1.0, 1.0).is_err(), "beta = 1.5 accepted");
    Ok(())
}

pub fn schedule_constants() -> Check {
    let mut rng = StdRng::seed_from_u64(53);
    for _ in 0..100 {
        let beta = rng.random_range(2.01..10.0);
        let (mu_x, mu_t) = (rng.random_range(0.01..10.0), rng.random_range(0.01..10.0));
        let l_x = mu_x * rng.random_range(1.0..5.0);
        let l_t = mu_t * rng.random_range(1.0..5.0);
        let (m_x, m_t) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
        let k = compute_k(beta, m_x, l_x, mu_x, m_t, l_t, mu_t).map_err(|e| e.to_string())?;
        ensure!(k as f64 >= 3.0 * beta, "K = {k} < 3 beta = {}", 3.0 * beta);
        let rho = rng.random_range(0.0..0.999);
        let k1 = compute_k1(k, rho).map_err(|e| e.to_string())?;
        ensure!(k1 >= 2 * k, "K1 = {k1} < 2K = {}", 2 * k);
        ensure!(k1 as f64 >= 16.0 / (1.0 - rho * rho) - 1e-9, "K1 = {k1} below 16/(1-rho^2)");
    }
    let bound = |n| transient_bound(n, weights(TopologyKind::Path, n).rho_w(), 1.0).unwrap();
    let ratio = bound(16) / bound(8);
    ensure!((32.0 * 0.6..=32.0 * 1.4).contains(&ratio), "transient ratio path 16/8 = {ratio}");
    Ok(())
}

// ---------------------------------------------------------------- metrics

pub fn pythagorean_decomposition() -> Check {
    let mut rng = StdRng::seed_from_u64(59);
    for trial in 0..100 {
        let n = 2 + trial % 30;
        let (p, q) = (1 + trial % 5, 1 + trial % 2);
        let state = SwarmState::new(random_matrix(&mut rng, n, p), random_matrix(&mut rng, n, q), trial)
            .map_err(|e| e.to_string())?;
        let opt = Optimum {
            x: (0..p).map(|_| rng.random_range(-3.0..3.0)).collect(),
            theta: (0..q).map(|_| rng.random_range(-3.0..3.0)).collect(),
        };
        let row = errors_at(&state, &opt).map_err(|e| e.to_string())?;
        let total: f64 = state
            .x
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(&opt.x).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum();
        let split = row.v1 + n as f64 * row.u1;
        ensure!((total - split).abs() <= 1e-9 * total.max(1e-300), "trial {trial}: {total} vs {split}");
        ensure!((row.mse_x * n as f64 - total).abs() <= 1e-9 * total, "trial {trial}: mse_x inconsistent");
    }
    let exp = Experiment::new(&config("ridge", "path:8", 500, 1)).map_err(|e| e.to_string())?;
    check_decomposition(&exp.run_path(0).map_err(|e| e.to_string())?)
}

pub fn check_decomposition(trace: &RunTrace) -> Check {
    let n = trace.meta.n as f64;
    for r in &trace.rows {
        let total = n * r.mse_x;
        let split = r.v1 + n * r.u1;
        ensure!(
            (total - split).abs() <= 1e-9 * total.max(f64::MIN_POSITIVE),
            "{} k={}: n*mse_x = {total}, V1 + n*U1 = {split}",
            trace.meta.topology,
            r.k
        );
    }
    Ok(())
}

pub fn slope_fit_calibration() -> Check {
    let mut runner = runner(128);
    runner
        .run(&(-4.0f64..1.0, -5.0f64..5.0, 1usize..50), |(exponent, log_c, start)| {
            let ks: Vec<f64> = (0..20).map(|i| (start + 37 * i) as f64).collect();
            let vals: Vec<f64> = ks.iter().map(|k| 10f64.powf(log_c) * k.powf(exponent)).collect();
            let fit = fit_loglog(&ks, &vals).unwrap();
            prop_assert!((fit.slope - exponent).abs() < 1e-9, "{} vs {}", fit.slope, exponent);
            prop_assert!((fit.intercept - log_c).abs() < 1e-8);
            prop_assert!(fit.r2 > 1.0 - 1e-9);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn synthetic(values: impl Fn(f64) -> f64, ks: &[usize]) -> RunTrace {
    RunTrace {
        meta: TraceMeta {
            problem: "synthetic".into(),
            n: 1,
            topology: "none".into(),
            rho_w: 0.0,
            seed: 0,
            paths: 1,
        },
        rows: ks
            .iter()
            .map(|&k| cdsa::metrics::TraceRow {
                k,
                mse_x: values(k as f64),
                ..Default::default()
            })
            .collect(),
        max_dev_x: 0.0,
        max_dev_theta: 0.0,
    }
}

pub fn crossover_refinement() -> Check {
    let fine: Vec<usize> = (1..=20_000).collect();
    let coarse = Schedule::with_defaults(20_000);
    let mut runner = runner(64);
    runner
        .run(&(1.0f64..1e4, 1.05f64..3.0), |(c, s)| {
            // a = 1/k + c/k² meets b = s/k once, at k = c/(s-1)
            let a = move |k: f64| 1.0 / k + c / (k * k);
            let b = move |k: f64| s / k;
            let f = crossover(&synthetic(a, &fine), &synthetic(b, &fine), Metric::MseX, 10).unwrap();
            let cks = coarse.points().to_vec();
            let g = crossover(&synthetic(a, &cks), &synthetic(b, &cks), Metric::MseX, 10).unwrap();
            match (f, g) {
                (Some(f), Some(g)) => {
                    let prev = cks.iter().copied().rfind(|&k| k < g).unwrap_or(0);
                    prop_assert!(f <= g && f > prev, "fine {f}, coarse {g}, previous coarse point {prev}");
                }
                (None, None) => {}
                (f, g) => prop_assert!(false, "fine {f:?} vs coarse {g:?}"),
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn single_agent_sgd() -> Check {
    let problem = RidgeProblem::new(1).unwrap();
    let w = WeightMatrix::identity(1).map_err(|e| e.to_string())?;
    let opt = problem.optimum().unwrap();
    let policy = StepsizePolicy::explicit(20.0, 20.0).unwrap();
    let schedule = Schedule::from_points(vec![1000, 5000]).map_err(|e| e.to_string())?;
    let init = SwarmState::initial(&problem);
    let mut mse = [0.0; 2];
    for path in 0..200u64 {
        let mut rec = TraceRecorder::new(schedule.clone(), opt.clone());
        run(&problem, &w, &policy, &init, 5000, path, &mut rec).map_err(|e| e.to_string())?;
        let meta = TraceMeta {
            problem: "ridge".into(),
            n: 1,
            topology: "single".into(),
            rho_w: 0.0,
            seed: path,
            paths: 1,
        };
        let trace = rec.into_trace(meta);
        mse[0] += trace.rows[0].mse_x / 200.0;
        mse[1] += trace.rows[1].mse_x / 200.0;
    }
    ensure!(mse[1] < mse[0], "single agent mse did not decrease: {} -> {}", mse[0], mse[1]);
    ensure!(mse[1] < mse[0] / 2.5, "single agent mse decreased too slowly: {} -> {}", mse[0], mse[1]);
    Ok(())
}

pub fn run_determinism() -> Check {
    let exp = Experiment::new(&config("logistic", "cycle:6", 300, 3)).map_err(|e| e.to_string())?;
    let a = exp.monte_carlo().map_err(|e| e.to_string())?;
    let b = exp.monte_carlo().map_err(|e| e.to_string())?;
    ensure!(a == b, "two identical ensembles differ");
    let mut reversed: Vec<RunTrace> = (0..3).rev().map(|p| exp.run_path(p).unwrap()).collect();
    reversed.reverse();
    let avg = cdsa::metrics::average_traces(&reversed).map_err(|e| e.to_string())?;
    ensure!(avg.rows == a.rows, "path execution order changed the average");
    Ok(())
}

/// Every check, in a fixed order.
pub type NamedCheck = (&'static str, fn() -> Check);

pub const ALL: &[NamedCheck] = &[
    ("double stochasticity, n = 2..64", double_stochasticity),
    ("spectral radius vs eigensolver", spectral_radius_matches_eigensolver),
    ("consensus contraction and average preservation", consensus_contraction_and_average),
    ("spectral gap scaling (path, mesh)", gap_scaling),
    ("random connected graphs", random_graph_weights),
    ("finite-difference gradients", finite_difference_gradients),
    ("ridge strong monotonicity", ridge_strong_monotonicity),
    ("learning step contraction", learning_step_contraction),
    ("oracle moments via validate_assumptions", oracle_moments),
    ("oracle determinism", oracles_are_deterministic),
    ("exact average recursion", average_recursion),
    ("live mixing contraction", live_mixing_contraction),
    ("deterministic gradient contraction", deterministic_contraction),
    ("uniform boundedness", uniform_boundedness),
    ("step-size policies", stepsize_policies),
    ("schedule constants K, K1, transient", schedule_constants),
    ("error decomposition", pythagorean_decomposition),
    ("slope fit on exact power laws", slope_fit_calibration),
    ("crossover under schedule refinement", crossover_refinement),
    ("single-agent SGD", single_agent_sgd),
    ("run determinism and path order", run_determinism),
];
