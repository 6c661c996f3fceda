//! Error functionals, trace averaging, rate fitting and schedule constants.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cdsa::{Recorder, Schedule, SwarmState};
use crate::error::{Error, Result};
use crate::problems::Optimum;

/// Column header of the trace CSV format.
pub const CSV_HEADER: [&str; 7] = ["k", "U1", "V1", "U2", "V2", "mse_x", "mse_theta"];

/// Error functionals at one iteration.
///
/// `u1 = ‖x̄ - x*‖²`, `v1 = ‖X - 1x̄ᵀ‖²_F`, `mse_x = (1/n) Σ_i ‖x_i - x*‖²`,
/// and likewise for θ.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub u1: f64,
    pub v1: f64,
    pub u2: f64,
    pub v2: f64,
    pub mse_x: f64,
    pub mse_theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    U1,
    V1,
    U2,
    V2,
    #[serde(rename = "mse_x", alias = "mse")]
    MseX,
    #[serde(rename = "mse_theta")]
    MseTheta,
}

impl Metric {
    pub const ALL: [Metric; 6] = [Metric::U1, Metric::V1, Metric::U2, Metric::V2, Metric::MseX, Metric::MseTheta];

    pub fn of(&self, row: &TraceRow) -> f64 {
        match self {
            Metric::U1 => row.u1,
            Metric::V1 => row.v1,
            Metric::U2 => row.u2,
            Metric::V2 => row.v2,
            Metric::MseX => row.mse_x,
            Metric::MseTheta => row.mse_theta,
        }
    }

    fn slot<'a>(&self, row: &'a mut TraceRow) -> &'a mut f64 {
        match self {
            Metric::U1 => &mut row.u1,
            Metric::V1 => &mut row.v1,
            Metric::U2 => &mut row.u2,
            Metric::V2 => &mut row.v2,
            Metric::MseX => &mut row.mse_x,
            Metric::MseTheta => &mut row.mse_theta,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::U1 => "U1",
            Metric::V1 => "V1",
            Metric::U2 => "U2",
            Metric::V2 => "V2",
            Metric::MseX => "mse_x",
            Metric::MseTheta => "mse_theta",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "U1" | "u1" => Metric::U1,
            "V1" | "v1" => Metric::V1,
            "U2" | "u2" => Metric::U2,
            "V2" | "v2" => Metric::V2,
            "mse_x" | "mse" => Metric::MseX,
            "mse_theta" => Metric::MseTheta,
            other => return Err(Error::Trace(format!("unknown metric `{other}`"))),
        })
    }
}

/// Descriptive fields carried by a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub problem: String,
    pub n: usize,
    pub topology: String,
    pub rho_w: f64,
    /// Path seed of a raw trace, master seed of an averaged one.
    pub seed: u64,
    pub paths: usize,
}

/// Recorded error time series of one run, or the Monte Carlo mean of several.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub meta: TraceMeta,
    pub rows: Vec<TraceRow>,
    /// Largest `‖x_i(k) - x*‖` seen at any iteration and agent.
    pub max_dev_x: f64,
    /// Largest `‖θ_i(k) - θ*‖` seen at any iteration and agent.
    pub max_dev_theta: f64,
}

impl RunTrace {
    pub fn recorded_k(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.k).collect()
    }

    pub fn series(&self, metric: Metric) -> Vec<f64> {
        self.rows.iter().map(|r| metric.of(r)).collect()
    }

    pub fn row_at(&self, k: usize) -> Option<&TraceRow> {
        self.rows.binary_search_by_key(&k, |r| r.k).ok().map(|i| &self.rows[i])
    }

    pub fn value_at(&self, metric: Metric, k: usize) -> Option<f64> {
        self.row_at(k).map(|r| metric.of(r))
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Writes the CSV body (header plus one row per recorded iteration).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            let fields = [
                r.k.to_string(),
                format!("{:e}", r.u1),
                format!("{:e}", r.v1),
                format!("{:e}", r.u2),
                format!("{:e}", r.v2),
                format!("{:e}", r.mse_x),
                format!("{:e}", r.mse_theta),
            ];
            w.write_record(&fields).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }

    /// Parses the rows of a trace CSV.
    pub fn read_csv_rows<R: Read>(input: R) -> Result<Vec<TraceRow>> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
        if header != CSV_HEADER {
            return Err(Error::Format(format!("unexpected CSV header {header:?}")));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| Error::Format(format!("bad number `{}`", &rec[i])))
            };
            rows.push(TraceRow {
                k: rec[0].parse().map_err(|_| Error::Format(format!("bad iteration `{}`", &rec[0])))?,
                u1: num(1)?,
                v1: num(2)?,
                u2: num(3)?,
                v2: num(4)?,
                mse_x: num(5)?,
                mse_theta: num(6)?,
            });
        }
        Ok(rows)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn column_means(m: &ndarray::Array2<f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    m.columns().into_iter().map(|c| c.sum() / n).collect()
}

/// Errors of one swarm state against `(x*, θ*)`.
pub fn errors_at(state: &SwarmState, optimum: &Optimum) -> Result<TraceRow> {
    if optimum.x.len() != state.p() || optimum.theta.len() != state.q() {
        return Err(Error::Problem(format!(
            "optimum has dimensions ({}, {}) but the state has ({}, {})",
            optimum.x.len(),
            optimum.theta.len(),
            state.p(),
            state.q()
        )));
    }
    let n = state.n() as f64;
    let part = |m: &ndarray::Array2<f64>, star: &[f64]| -> (f64, f64, f64) {
        let mean = column_means(m);
        let u: f64 = mean.iter().zip(star).map(|(a, b)| (a - b).powi(2)).sum();
        let mut v = 0.0;
        let mut total = 0.0;
        for row in m.rows() {
            for ((x, mu), s) in row.iter().zip(&mean).zip(star) {
                v += (x - mu).powi(2);
                total += (x - s).powi(2);
            }
        }
        (u, v, total / n)
    };
    let (u1, v1, mse_x) = part(&state.x, &optimum.x);
    let (u2, v2, mse_theta) = part(&state.theta, &optimum.theta);
    Ok(TraceRow {
        k: state.k,
        u1,
        v1,
        u2,
        v2,
        mse_x,
        mse_theta,
    })
}

/// Records [`errors_at`] on a schedule and tracks the largest deviation from
/// the optimum over every iteration.
#[derive(Debug, Clone)]
pub struct TraceRecorder {
    schedule: Schedule,
    optimum: Optimum,
    rows: Vec<TraceRow>,
    max_dev_x: f64,
    max_dev_theta: f64,
}

impl TraceRecorder {
    pub fn new(schedule: Schedule, optimum: Optimum) -> Self {
        Self {
            schedule,
            optimum,
            rows: Vec::new(),
            max_dev_x: 0.0,
            max_dev_theta: 0.0,
        }
    }

    pub fn into_trace(self, meta: TraceMeta) -> RunTrace {
        RunTrace {
            meta,
            rows: self.rows,
            max_dev_x: self.max_dev_x,
            max_dev_theta: self.max_dev_theta,
        }
    }
}

fn max_row_distance(m: &ndarray::Array2<f64>, star: &[f64]) -> f64 {
    m.rows()
        .into_iter()
        .map(|r| r.iter().zip(star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

impl Recorder for TraceRecorder {
    fn observe(&mut self, state: &SwarmState) {
        self.max_dev_x = self.max_dev_x.max(max_row_distance(&state.x, &self.optimum.x));
        self.max_dev_theta = self.max_dev_theta.max(max_row_distance(&state.theta, &self.optimum.theta));
    }

    fn wants(&self, k: usize) -> bool {
        self.schedule.contains(k)
    }

    fn record(&mut self, state: &SwarmState) {
        // Dimensions are checked before the run starts.
        self.rows.push(errors_at(state, &self.optimum).expect("optimum matches state"));
    }
}

/// Pointwise mean of traces that share a schedule and metadata.
pub fn average_traces(traces: &[RunTrace]) -> Result<RunTrace> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Trace("cannot average an empty list of traces".into()))?;
    let ks = first.recorded_k();
    for (i, t) in traces.iter().enumerate().skip(1) {
        if t.recorded_k() != ks {
            return Err(Error::Trace(format!("trace {i} has a different recording schedule")));
        }
        let (a, b) = (&first.meta, &t.meta);
        if a.n != b.n || a.topology != b.topology || a.problem != b.problem || a.rho_w.to_bits() != b.rho_w.to_bits() {
            return Err(Error::Trace(format!("trace {i} has mismatched metadata")));
        }
    }
    let count = traces.len() as f64;
    let mut rows: Vec<TraceRow> = ks.iter().map(|&k| TraceRow { k, ..Default::default() }).collect();
    for t in traces {
        for (acc, r) in rows.iter_mut().zip(&t.rows) {
            for m in Metric::ALL {
                *m.slot(acc) += m.of(r);
            }
        }
    }
    for acc in &mut rows {
        for m in Metric::ALL {
            *m.slot(acc) /= count;
        }
    }
    Ok(RunTrace {
        meta: TraceMeta {
            paths: traces.iter().map(|t| t.meta.paths).sum(),
            ..first.meta.clone()
        },
        rows,
        max_dev_x: traces.iter().map(|t| t.max_dev_x).fold(0.0, f64::max),
        max_dev_theta: traces.iter().map(|t| t.max_dev_theta).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Minimum number of points in a slope-fitting window.
pub const MIN_FIT_POINTS: usize = 5;

/// Ordinary least squares of `log10(value)` on `log10(k)`.
pub fn fit_loglog(ks: &[f64], values: &[f64]) -> Result<SlopeFit> {
    if ks.len() != values.len() {
        return Err(Error::Trace("k and value series differ in length".into()));
    }
    if ks.len() < MIN_FIT_POINTS {
        return Err(Error::Trace(format!(
            "need at least {MIN_FIT_POINTS} points to fit a slope, got {}",
            ks.len()
        )));
    }
    if let Some(v) = values.iter().chain(ks).find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Trace(format!("cannot take the logarithm of {v}")));
    }
    let xs: Vec<f64> = ks.iter().map(|k| k.log10()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.log10()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Trace("all k in the window are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(SlopeFit {
        slope,
        intercept,
        r2,
        points: xs.len(),
    })
}

/// Log-log slope of `metric` over recorded iterations in `[k_lo, k_hi]`.
pub fn loglog_slope(trace: &RunTrace, metric: Metric, k_lo: usize, k_hi: usize) -> Result<SlopeFit> {
    let (ks, vs): (Vec<f64>, Vec<f64>) = trace
        .rows
        .iter()
        .filter(|r| r.k >= k_lo && r.k <= k_hi)
        .map(|r| (r.k as f64, metric.of(r)))
        .unzip();
    fit_loglog(&ks, &vs)
}

/// Default number of initial iterations skipped by [`crossover`].
pub const DEFAULT_BURN_IN: usize = 10;

/// Smallest recorded `k ≥ burn_in` at which `a` has caught up with `b`
/// (`a(k) ≤ b(k)`).
pub fn crossover(a: &RunTrace, b: &RunTrace, metric: Metric, burn_in: usize) -> Result<Option<usize>> {
    if a.recorded_k() != b.recorded_k() {
        return Err(Error::Trace("crossover needs traces on the same schedule".into()));
    }
    Ok(a
        .rows
        .iter()
        .zip(&b.rows)
        .find(|(ra, rb)| ra.k >= burn_in && metric.of(ra) <= metric.of(rb))
        .map(|(ra, _)| ra.k))
}

/// `K₁ = ⌈max{2K, 16 / (1 - ρ_w²)}⌉`.
pub fn compute_k1(k: u64, rho_w: f64) -> Result<u64> {
    if !(0.0..1.0).contains(&rho_w) {
        return Err(Error::Policy(format!("rho_w must lie in [0, 1), got {rho_w}")));
    }
    if k == 0 {
        return Err(Error::Policy("K must be positive".into()));
    }
    let bound = (2.0 * k as f64).max(16.0 / (1.0 - rho_w * rho_w));
    Ok(bound.ceil() as u64)
}

/// Transient-time scale `c · n / (1 - ρ_w)²`.
pub fn transient_bound(n: usize, rho_w: f64, c: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho_w) {
        return Err(Error::Policy(format!("rho_w must lie in [0, 1), got {rho_w}")));
    }
    if !(c > 0.0) {
        return Err(Error::Policy(format!("calibration constant must be positive, got {c}")));
    }
    Ok(c * n as f64 / (1.0 - rho_w).powi(2))
}
