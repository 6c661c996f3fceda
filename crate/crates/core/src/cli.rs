//! `cdsa` command-line front end.
//!
//! Exit status: 0 on success, 1 on usage or configuration errors, 2 on
//! runtime failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::{emit, render_svg, write_sidecar, EmitFormat, Experiment, ExperimentConfig, Series, Sidecar};
use crate::metrics::{compute_k1, Metric, RunTrace};
use crate::network::{metropolis_weights, TopologySpec};
use crate::problems::validate_assumptions;

/// Canned configuration behind `cdsa fig2`.
pub const FIG2_CONFIG: &str = include_str!("../configs/fig2.toml");
/// Canned configuration behind `cdsa fig3`.
pub const FIG3_CONFIG: &str = include_str!("../configs/fig3.toml");
/// Ridge regression, 10 agents, complete graph.
pub const RIDGE_COMPLETE10_CONFIG: &str = include_str!("../configs/ridge_complete10.toml");

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cdsa", version, about = "Coupled distributed stochastic approximation experiments")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags that override the corresponding config keys.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Monte Carlo paths (overrides run.paths; config default 200)
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Iterations per path (overrides run.k_max)
    #[arg(long, global = true)]
    pub kmax: Option<usize>,
    /// Master seed (overrides run.master_seed; config default 0)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides output.dir; default $CDSA_OUT_DIR or ./out)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also write SVG plots (overrides output.svg; default off)
    #[arg(long, global = true)]
    pub svg: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte Carlo ensemble for one configuration
    Run {
        /// TOML experiment config
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one ensemble per topology
    Sweep {
        /// TOML experiment config
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated topologies, e.g. path:5,path:25,mesh2d:5x5 (default: the config's [sweep] points)
        #[arg(long)]
        axis: Option<String>,
    },
    /// Ridge regression on path and complete graphs (CSV + SVG)
    Fig2,
    /// Logistic regression on four 25-agent topologies (CSV + SVG)
    Fig3,
    /// Monte Carlo check of oracle unbiasedness and variance bounds
    Validate {
        /// TOML experiment config
        #[arg(long)]
        config: PathBuf,
        /// Number of random (x, θ) points
        #[arg(long, default_value_t = 10)]
        points: usize,
        /// Oracle draws per point
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
    },
    /// Spectral radius and gap of Metropolis-Hastings weights
    Spectra {
        /// Topologies such as complete:10 or mesh2d:5x5
        #[arg(required = true)]
        topologies: Vec<String>,
        /// Reference step-size offset K used for K1
        #[arg(long = "reference-k", default_value_t = 18)]
        reference_k: u64,
    },
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(p) = self.paths {
            cfg.run.paths = p;
        }
        if let Some(k) = self.kmax {
            cfg.run.k_max = k;
        }
        if let Some(s) = self.seed {
            cfg.run.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        if self.svg {
            cfg.output.svg = true;
        }
        cfg.validate()
    }
}

/// Parses `argv` (including the program name), runs, and returns the exit code.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(&cli, &mut out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            match e {
                Error::Config { .. } => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn load(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

fn canned(text: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_toml_str(text)?;
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn execute<W: Write>(cli: &Cli, out: &mut W) -> Result<()> {
    let ov = &cli.overrides;
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(config, ov)?;
            if cfg.topology.is_none() {
                return Err(Error::config("topology", "`run` needs a [topology] section (use `sweep` for [sweep])"));
            }
            let (_, trace) = run_and_write(&cfg, &cfg.stem(), out)?;
            if cfg.output.svg {
                let path = cfg.output.dir.join(format!("{}.svg", cfg.stem()));
                emit(std::slice::from_ref(&trace), EmitFormat::Svg(cfg.output.metric), &path)?;
                say(out, format!("wrote {}", path.display()))?;
            }
            Ok(())
        }
        Command::Sweep { config, axis } => {
            let cfg = load(config, ov)?;
            let specs = match axis {
                Some(a) => a
                    .split(',')
                    .map(TopologySpec::parse)
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::config("--axis", e.to_string()))?,
                None => cfg
                    .sweep
                    .as_ref()
                    .ok_or_else(|| Error::config("sweep", "no [sweep] section and no --axis given"))?
                    .specs()?,
            };
            let traces = run_points(&cfg, &specs, "", out)?;
            if cfg.output.svg {
                let path = cfg.output.dir.join(format!("{}sweep.svg", prefix_of(&cfg)));
                emit(&traces, EmitFormat::Svg(cfg.output.metric), &path)?;
                say(out, format!("wrote {}", path.display()))?;
            }
            Ok(())
        }
        Command::Fig2 => fig2(&canned(FIG2_CONFIG, ov)?, out),
        Command::Fig3 => fig3(&canned(FIG3_CONFIG, ov)?, out),
        Command::Validate { config, points, draws } => {
            let cfg = load(config, ov)?;
            let exp = Experiment::new(&cfg)?;
            let report = validate_assumptions(&exp.problem, *points, *draws, cfg.run.master_seed);
            say(out, report.to_string())?;
            if report.passed() {
                Ok(())
            } else {
                Err(Error::Problem(format!(
                    "oracle bias detected at points {:?}",
                    report.flagged()
                )))
            }
        }
        Command::Spectra { topologies, reference_k } => {
            say(out, format!("{:<14} {:>5} {:>14} {:>14} {:>10}", "topology", "n", "rho_w", "gap", "K1"))?;
            for t in topologies {
                let topo = TopologySpec::parse(t)
                    .and_then(|s| s.build())
                    .map_err(|e| Error::config("topology", e.to_string()))?;
                let w = metropolis_weights(&topo)?;
                let k1 = compute_k1(*reference_k, w.rho_w())?;
                say(
                    out,
                    format!(
                        "{:<14} {:>5} {:>14.10} {:>14.10} {:>10}",
                        topo.label(),
                        topo.n(),
                        w.rho_w(),
                        w.gap(),
                        k1
                    ),
                )?;
            }
            Ok(())
        }
    }
}

fn say<W: Write>(out: &mut W, line: String) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn prefix_of(cfg: &ExperimentConfig) -> String {
    cfg.output.name.as_ref().map(|n| format!("{n}_")).unwrap_or_default()
}

/// Runs one ensemble and writes `<stem>.csv` and `<stem>.toml`.
fn run_and_write<W: Write>(cfg: &ExperimentConfig, stem: &str, out: &mut W) -> Result<(Experiment, RunTrace)> {
    let exp = Experiment::new(cfg)?;
    let trace = exp.monte_carlo()?;
    let csv = cfg.output.dir.join(format!("{stem}.csv"));
    emit(std::slice::from_ref(&trace), EmitFormat::Csv, &csv)?;
    let meta = cfg.output.dir.join(format!("{stem}.toml"));
    write_sidecar(&Sidecar::new(&exp, &trace), &meta)?;
    let last = trace.last().copied().unwrap_or_default();
    say(
        out,
        format!(
            "{}: k={} mse_x={:.6e} U1={:.6e} V1={:.6e} U2={:.6e} rho_w={:.6} -> {}",
            trace.meta.topology,
            last.k,
            last.mse_x,
            last.u1,
            last.v1,
            last.u2,
            trace.meta.rho_w,
            csv.display()
        ),
    )?;
    Ok((exp, trace))
}

/// Runs every point, writing files for those that succeed. Fails after all
/// points ran if any of them failed.
fn run_points<W: Write>(cfg: &ExperimentConfig, specs: &[TopologySpec], prefix: &str, out: &mut W) -> Result<Vec<RunTrace>> {
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for spec in specs {
        let point = cfg.at_point(spec);
        let stem = format!("{prefix}{}", point.stem());
        match run_and_write(&point, &stem, out) {
            Ok((_, t)) => traces.push(t),
            Err(e) => {
                eprintln!("error: {}: {}", spec_label(spec), one_line(&e.to_string()));
                failures.push(spec_label(spec));
            }
        }
    }
    if failures.is_empty() {
        Ok(traces)
    } else {
        Err(Error::Problem(format!("sweep points failed: {}", failures.join(", "))))
    }
}

fn spec_label(spec: &TopologySpec) -> String {
    match &spec.kind {
        crate::network::TopologyKind::Mesh2D { rows, cols } => format!("mesh2d:{rows}x{cols}"),
        k => format!("{}:{}", k.name(), spec.n),
    }
}

fn write_svg<W: Write>(path: &Path, title: &str, y_label: &str, series: &[Series], out: &mut W) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, render_svg(title, y_label, series)).map_err(|e| Error::io(path, e))?;
    say(out, format!("wrote {}", path.display()))
}

fn fig2<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> Result<()> {
    let specs = cfg.sweep.as_ref().expect("canned fig2 config has a sweep").specs()?;
    let traces = run_points(cfg, &specs, "fig2_", out)?;
    let dir = &cfg.output.dir;
    for (family, panel) in [("path", 'a'), ("complete", 'b')] {
        let group: Vec<&RunTrace> = traces.iter().filter(|t| t.meta.topology.starts_with(family)).collect();
        if let Some(t) = group.iter().find(|t| t.meta.n == 10).or(group.first()) {
            let series: Vec<Series> = [Metric::U1, Metric::V1, Metric::U2, Metric::V2, Metric::MseX]
                .iter()
                .map(|m| Series {
                    label: m.name().to_string(),
                    points: t.rows.iter().map(|r| (r.k as f64, m.of(r))).collect(),
                })
                .collect();
            write_svg(
                &dir.join(format!("fig2_{panel}1.svg")),
                &format!("{} errors, n={}", t.meta.topology, t.meta.n),
                "error",
                &series,
                out,
            )?;
        }
        let owned: Vec<RunTrace> = group.into_iter().cloned().collect();
        let path = dir.join(format!("fig2_{panel}2.svg"));
        emit(&owned, EmitFormat::Svg(cfg.output.metric), &path)?;
        say(out, format!("wrote {}", path.display()))?;
    }
    Ok(())
}

fn fig3<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> Result<()> {
    let specs = cfg.sweep.as_ref().expect("canned fig3 config has a sweep").specs()?;
    let traces = run_points(cfg, &specs, "fig3_", out)?;
    let path = cfg.output.dir.join("fig3.svg");
    emit(&traces, EmitFormat::Svg(cfg.output.metric), &path)?;
    say(out, format!("wrote {}", path.display()))
}
