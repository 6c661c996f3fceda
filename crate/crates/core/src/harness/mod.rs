//! Seeded Monte Carlo ensembles and topology sweeps.
//!
//! Path `p` of an experiment uses the seed `derive(master_seed, p)`; agent
//! `i` at iteration `k` then reads the counter streams keyed by that seed, so
//! paths can run in any order or in parallel with identical results. Two
//! sweep points with the same agent count see the same random numbers
//! (common random numbers), which is intentional.

mod config;
mod output;

use rand::Rng;
use rayon::prelude::*;

pub use config::{
    ExperimentConfig, OutputConfig, PolicyConfig, ProblemConfig, ProblemKind, RunConfig, SweepConfig, TopologyConfig,
    DEFAULT_OUT_DIR, DEFAULT_PATHS, OUT_DIR_ENV,
};
pub use output::{emit, render_svg, write_sidecar, EmitFormat, Series, Sidecar};

use crate::cdsa::{run, Schedule, StepsizePolicy, SwarmState};
use crate::error::{Error, Result};
use crate::metrics::{average_traces, RunTrace, TraceMeta, TraceRecorder};
use crate::network::{metropolis_weights, Topology, TopologySpec, WeightMatrix};
use crate::problems::{AnalyticConstants, CoupledProblem, LogisticProblem, Optimum, RidgeProblem};
use crate::rng::path_seed;

/// A concrete problem chosen by configuration.
#[derive(Debug, Clone)]
pub enum ProblemInstance {
    Ridge(RidgeProblem),
    Logistic(LogisticProblem),
}

impl ProblemInstance {
    pub fn from_config(cfg: &ProblemConfig, n: usize) -> Result<Self> {
        Ok(match cfg.kind {
            ProblemKind::Ridge => Self::Ridge(RidgeProblem::with_learn_noise(n, cfg.learn_noise)?),
            ProblemKind::Logistic => Self::Logistic(
                LogisticProblem::new(n, cfg.samples_per_agent, cfg.data_seed)?.with_learn_noise(cfg.learn_noise)?,
            ),
        })
    }
}

macro_rules! dispatch {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            ProblemInstance::Ridge($p) => $e,
            ProblemInstance::Logistic($p) => $e,
        }
    };
}

impl CoupledProblem for ProblemInstance {
    fn agents(&self) -> usize {
        dispatch!(self, p => p.agents())
    }
    fn decision_dim(&self) -> usize {
        dispatch!(self, p => p.decision_dim())
    }
    fn param_dim(&self) -> usize {
        dispatch!(self, p => p.param_dim())
    }
    fn comp_grad<R: Rng + ?Sized>(&self, agent: usize, x: &[f64], theta: &[f64], rng: &mut R, out: &mut [f64]) {
        dispatch!(self, p => p.comp_grad(agent, x, theta, rng, out))
    }
    fn learn_grad<R: Rng + ?Sized>(&self, agent: usize, theta: &[f64], rng: &mut R, out: &mut [f64]) {
        dispatch!(self, p => p.learn_grad(agent, theta, rng, out))
    }
    fn comp_grad_exact(&self, agent: usize, x: &[f64], theta: &[f64], out: &mut [f64]) {
        dispatch!(self, p => p.comp_grad_exact(agent, x, theta, out))
    }
    fn learn_grad_exact(&self, agent: usize, theta: &[f64], out: &mut [f64]) {
        dispatch!(self, p => p.learn_grad_exact(agent, theta, out))
    }
    fn analytic_constants(&self) -> Option<AnalyticConstants> {
        dispatch!(self, p => p.analytic_constants())
    }
    fn optimum(&self) -> Option<Optimum> {
        dispatch!(self, p => p.optimum())
    }
    fn initial_point(&self) -> (Vec<f64>, Vec<f64>) {
        dispatch!(self, p => p.initial_point())
    }
    fn name(&self) -> &'static str {
        dispatch!(self, p => p.name())
    }
}

/// Everything needed to run the paths of one configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub topology: Topology,
    pub weights: WeightMatrix,
    pub problem: ProblemInstance,
    pub policy: StepsizePolicy,
    pub schedule: Schedule,
    pub optimum: Optimum,
}

impl Experiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let topology = config
            .topology
            .as_ref()
            .ok_or_else(|| Error::config("topology", "missing"))?
            .build()?;
        let weights = metropolis_weights(&topology)?;
        let problem = ProblemInstance::from_config(&config.problem, topology.n())?;
        let policy = config.policy.resolve(&problem)?;
        let optimum = problem
            .optimum()
            .ok_or_else(|| Error::Problem(format!("{} problem has no reference optimum", problem.name())))?;
        Ok(Self {
            config: config.clone(),
            schedule: config.run.schedule(),
            topology,
            weights,
            problem,
            policy,
            optimum,
        })
    }

    fn meta(&self, seed: u64, paths: usize) -> TraceMeta {
        TraceMeta {
            problem: self.problem.name().to_string(),
            n: self.topology.n(),
            topology: self.topology.label(),
            rho_w: self.weights.rho_w(),
            seed,
            paths,
        }
    }

    /// Seed of path `index`.
    pub fn path_seed(&self, index: usize) -> u64 {
        path_seed(self.config.run.master_seed, index as u64)
    }

    /// One CDSA run with the seed of path `index`.
    pub fn run_path(&self, index: usize) -> Result<RunTrace> {
        self.run_with_seed(self.path_seed(index))
            .map_err(|e| Error::Path {
                path: index,
                source: Box::new(e),
            })
    }

    /// One CDSA run from the problem's initial state with an explicit seed.
    pub fn run_with_seed(&self, seed: u64) -> Result<RunTrace> {
        let init = SwarmState::initial(&self.problem);
        let mut recorder = TraceRecorder::new(self.schedule.clone(), self.optimum.clone());
        run(
            &self.problem,
            &self.weights,
            &self.policy,
            &init,
            self.config.run.k_max,
            seed,
            &mut recorder,
        )?;
        Ok(recorder.into_trace(self.meta(seed, 1)))
    }

    /// Runs all paths (in parallel) and averages them in path-index order.
    pub fn monte_carlo(&self) -> Result<RunTrace> {
        let traces: Vec<RunTrace> = (0..self.config.run.paths)
            .into_par_iter()
            .map(|p| self.run_path(p))
            .collect::<Result<_>>()?;
        let mut avg = average_traces(&traces)?;
        avg.meta.seed = self.config.run.master_seed;
        Ok(avg)
    }
}

/// Averaged trace over `config.run.paths` independent seeded runs.
pub fn monte_carlo(config: &ExperimentConfig) -> Result<RunTrace> {
    Experiment::new(config)?.monte_carlo()
}

/// Result of one sweep point.
#[derive(Debug)]
pub struct SweepPoint {
    pub spec: TopologySpec,
    pub result: Result<RunTrace>,
}

/// One averaged trace per topology; a failing point does not affect the others.
pub fn sweep(base: &ExperimentConfig, axis: &[TopologySpec]) -> Vec<SweepPoint> {
    axis.iter()
        .map(|spec| SweepPoint {
            spec: spec.clone(),
            result: monte_carlo(&base.at_point(spec)),
        })
        .collect()
}
