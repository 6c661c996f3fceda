//! Experiment configuration, read from TOML files with sections
//! `[problem]`, `[topology]`, `[policy]`, `[run]`, `[output]` and an
//! optional `[sweep]`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cdsa::{Schedule, StepsizePolicy, DEFAULT_DENSE_UNTIL, DEFAULT_LOG_POINTS};
use crate::error::{Error, Result};
use crate::metrics::Metric;
use crate::network::{Topology, TopologyKind, TopologySpec};
use crate::problems::{CoupledProblem, DEFAULT_SAMPLES_PER_AGENT};

/// Environment variable consulted for the default output directory.
pub const OUT_DIR_ENV: &str = "CDSA_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "out";
pub const DEFAULT_PATHS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Ridge,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    /// Standard deviation of Gaussian noise on the learning oracle.
    #[serde(default)]
    pub learn_noise: f64,
    /// Logistic only: samples held by each agent (even).
    #[serde(default = "default_samples")]
    pub samples_per_agent: usize,
    /// Logistic only: seed of the synthetic datasets.
    #[serde(default)]
    pub data_seed: u64,
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES_PER_AGENT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    /// `path`, `cycle`, `mesh2d`, `complete` or `custom`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
}

impl TopologyConfig {
    pub fn from_spec(spec: &TopologySpec) -> Self {
        let mut cfg = Self {
            kind: spec.kind.name().to_string(),
            n: Some(spec.n),
            rows: None,
            cols: None,
            edges: None,
        };
        match &spec.kind {
            TopologyKind::Mesh2D { rows, cols } => {
                cfg.rows = Some(*rows);
                cfg.cols = Some(*cols);
            }
            TopologyKind::Custom { edges } => cfg.edges = Some(edges.iter().map(|&(a, b)| [a, b]).collect()),
            _ => {}
        }
        cfg
    }

    pub fn build(&self) -> Result<Topology> {
        let need_n = || self.n.ok_or_else(|| Error::config("topology.n", "required for this topology kind"));
        let wrap = |e: Error| Error::config("topology", e.to_string());
        match self.kind.as_str() {
            "path" => Topology::build(TopologyKind::Path, need_n()?).map_err(wrap),
            "cycle" => Topology::build(TopologyKind::Cycle, need_n()?).map_err(wrap),
            "complete" => Topology::build(TopologyKind::Complete, need_n()?).map_err(wrap),
            "mesh2d" => {
                let rows = self.rows.ok_or_else(|| Error::config("topology.rows", "required for mesh2d"))?;
                let cols = self.cols.ok_or_else(|| Error::config("topology.cols", "required for mesh2d"))?;
                let n = self.n.unwrap_or(rows * cols);
                if n != rows * cols {
                    return Err(Error::config("topology.n", format!("mesh {rows}x{cols} has {} vertices, not {n}", rows * cols)));
                }
                Topology::build(TopologyKind::Mesh2D { rows, cols }, n).map_err(wrap)
            }
            "custom" => {
                let edges = self
                    .edges
                    .as_ref()
                    .ok_or_else(|| Error::config("topology.edges", "required for custom topologies"))?;
                let edges = edges.iter().map(|e| (e[0], e[1])).collect();
                Topology::build(TopologyKind::Custom { edges }, need_n()?).map_err(wrap)
            }
            other => Err(Error::config("topology.kind", format!("unknown topology kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PolicyConfig {
    /// `α_k = γ_k = a / (k + b)`.
    Explicit {
        #[serde(default = "twenty")]
        a: f64,
        #[serde(default = "twenty")]
        b: f64,
    },
    /// `β / (μ (k + K))`; omitted constants come from the problem.
    Harmonic {
        beta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k_offset: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu_x: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu_theta: Option<f64>,
    },
}

fn twenty() -> f64 {
    20.0
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig::Explicit { a: 20.0, b: 20.0 }
    }
}

impl PolicyConfig {
    pub fn resolve<P: CoupledProblem>(&self, problem: &P) -> Result<StepsizePolicy> {
        let wrap = |e: Error| Error::config("policy", e.to_string());
        match *self {
            PolicyConfig::Explicit { a, b } => StepsizePolicy::explicit(a, b).map_err(wrap),
            PolicyConfig::Harmonic {
                beta,
                k_offset,
                mu_x,
                mu_theta,
            } => {
                let constants = problem.analytic_constants();
                let missing = |key: &str| {
                    Error::config(
                        format!("policy.{key}"),
                        format!("required because the {} problem declares no analytic constants", problem.name()),
                    )
                };
                let k_offset = match (k_offset, &constants) {
                    (Some(k), _) => k,
                    (None, Some(c)) => {
                        crate::cdsa::compute_k(beta, c.m_x, c.l_x, c.mu_x, c.m_theta, c.l_theta, c.mu_theta).map_err(wrap)?
                    }
                    (None, None) => return Err(missing("k_offset")),
                };
                let mu_x = mu_x.or(constants.map(|c| c.mu_x)).ok_or_else(|| missing("mu_x"))?;
                let mu_theta = mu_theta.or(constants.map(|c| c.mu_theta)).ok_or_else(|| missing("mu_theta"))?;
                StepsizePolicy::harmonic(beta, k_offset, mu_x, mu_theta).map_err(wrap)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub k_max: usize,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_dense")]
    pub dense_until: usize,
    #[serde(default = "default_log_points")]
    pub log_points: usize,
}

fn default_paths() -> usize {
    DEFAULT_PATHS
}
fn default_dense() -> usize {
    DEFAULT_DENSE_UNTIL
}
fn default_log_points() -> usize {
    DEFAULT_LOG_POINTS
}

impl RunConfig {
    pub fn schedule(&self) -> Schedule {
        Schedule::standard(self.k_max, self.dense_until, self.log_points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// File stem; defaults to the topology label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub svg: bool,
    /// Metric drawn in SVG plots.
    #[serde(default = "default_metric")]
    pub metric: Metric,
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn default_metric() -> Metric {
    Metric::MseX
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            name: None,
            svg: false,
            metric: default_metric(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Topology strings such as `path:5` or `mesh2d:5x5`.
    pub points: Vec<String>,
}

impl SweepConfig {
    pub fn specs(&self) -> Result<Vec<TopologySpec>> {
        self.points
            .iter()
            .enumerate()
            .map(|(i, s)| TopologySpec::parse(s).map_err(|e| Error::config(format!("sweep.points[{i}]"), e.to_string())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologyConfig>,
    #[serde(default)]
    pub policy: PolicyConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.message().to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::config(if key == "." { "<document>".to_string() } else { key }, e.inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.k_max == 0 {
            return Err(Error::config("run.k_max", "must be at least 1"));
        }
        if self.run.paths == 0 {
            return Err(Error::config("run.paths", "must be at least 1"));
        }
        if self.run.master_seed > i64::MAX as u64 {
            return Err(Error::config("run.master_seed", "must be below 2^63"));
        }
        if self.problem.data_seed > i64::MAX as u64 {
            return Err(Error::config("problem.data_seed", "must be below 2^63"));
        }
        if !(self.problem.learn_noise >= 0.0 && self.problem.learn_noise.is_finite()) {
            return Err(Error::config("problem.learn_noise", "must be finite and non-negative"));
        }
        if self.problem.kind == ProblemKind::Logistic
            && (self.problem.samples_per_agent == 0 || !self.problem.samples_per_agent.is_multiple_of(2))
        {
            return Err(Error::config("problem.samples_per_agent", "must be a positive even number"));
        }
        match (&self.topology, &self.sweep) {
            (None, None) => return Err(Error::config("topology", "missing (required unless [sweep] is given)")),
            (Some(t), _) => {
                t.build()?;
            }
            _ => {}
        }
        if let Some(s) = &self.sweep {
            if s.points.is_empty() {
                return Err(Error::config("sweep.points", "must not be empty"));
            }
            for spec in s.specs()? {
                spec.build()
                    .map_err(|e| Error::config("sweep.points", e.to_string()))?;
            }
        }
        if let PolicyConfig::Harmonic { beta, .. } = self.policy {
            if !(beta > 2.0) {
                return Err(Error::config("policy.beta", format!("must exceed 2, got {beta}")));
            }
        }
        Ok(())
    }

    /// Copy of this config with the topology replaced and the sweep removed.
    pub fn at_point(&self, spec: &TopologySpec) -> Self {
        Self {
            topology: Some(TopologyConfig::from_spec(spec)),
            sweep: None,
            ..self.clone()
        }
    }

    /// Output file stem.
    pub fn stem(&self) -> String {
        if let Some(name) = &self.output.name {
            return name.clone();
        }
        match self.topology.as_ref().map(|t| t.build()) {
            Some(Ok(t)) => format!("{}_{}", self.problem_name(), t.label().replace(':', "_")),
            _ => self.problem_name().to_string(),
        }
    }

    fn problem_name(&self) -> &'static str {
        match self.problem.kind {
            ProblemKind::Ridge => "ridge",
            ProblemKind::Logistic => "logistic",
        }
    }
}
