//! Result files: trace CSV, TOML metadata sidecar and static SVG line plots.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use super::{Experiment, ExperimentConfig};
use crate::cdsa::StepsizePolicy;
use crate::error::{Error, Result};
use crate::metrics::{Metric, RunTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Csv,
    /// Log-log plot of one metric, one line per trace.
    Svg(Metric),
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Writes traces to `path` in the given format. CSV takes exactly one trace.
pub fn emit(traces: &[RunTrace], format: EmitFormat, path: &Path) -> Result<()> {
    if traces.is_empty() {
        return Err(Error::Trace("nothing to emit: empty trace list".into()));
    }
    ensure_parent(path)?;
    match format {
        EmitFormat::Csv => {
            let [trace] = traces else {
                return Err(Error::Trace(format!("CSV output holds one trace, got {}", traces.len())));
            };
            let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            trace.write_csv(BufWriter::new(file)).map_err(|e| match e {
                Error::Format(msg) => Error::io(path, std::io::Error::other(msg)),
                other => other,
            })
        }
        EmitFormat::Svg(metric) => {
            let series: Vec<Series> = traces
                .iter()
                .map(|t| Series {
                    label: format!("{} (n={})", t.meta.topology, t.meta.n),
                    points: t.rows.iter().map(|r| (r.k as f64, metric.of(r))).collect(),
                })
                .collect();
            let title = format!("{} {}", traces[0].meta.problem, metric);
            fs::write(path, render_svg(&title, metric.name(), &series)).map_err(|e| Error::io(path, e))
        }
    }
}

/// Metadata written next to a trace CSV. Echoes the fully resolved config so
/// no default stays implicit.
#[derive(Debug, Clone, Serialize)]
pub struct Sidecar {
    pub problem: String,
    pub n: usize,
    pub topology: String,
    pub rho_w: f64,
    pub spectral_gap: f64,
    pub master_seed: u64,
    pub paths: usize,
    pub recorded_points: usize,
    pub max_dev_x: f64,
    pub max_dev_theta: f64,
    pub resolved_policy: StepsizePolicy,
    pub config: ExperimentConfig,
}

impl Sidecar {
    pub fn new(exp: &Experiment, trace: &RunTrace) -> Self {
        Self {
            problem: trace.meta.problem.clone(),
            n: trace.meta.n,
            topology: trace.meta.topology.clone(),
            rho_w: trace.meta.rho_w,
            spectral_gap: 1.0 - trace.meta.rho_w,
            master_seed: exp.config.run.master_seed,
            paths: trace.meta.paths,
            recorded_points: trace.rows.len(),
            max_dev_x: trace.max_dev_x,
            max_dev_theta: trace.max_dev_theta,
            resolved_policy: exp.policy,
            config: exp.config.clone(),
        }
    }
}

pub fn write_sidecar(sidecar: &Sidecar, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let text = toml::to_string(sidecar).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One named line of a plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 820.0;
const HEIGHT: f64 = 520.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 220.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Renders a log-log line plot. Non-positive values are skipped.
pub fn render_svg(title: &str, y_label: &str, series: &[Series]) -> String {
    let positive = |&(x, y): &(f64, f64)| x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite();
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied().filter(positive)).collect();
    let bounds = |sel: fn(&(f64, f64)) -> f64| -> (f64, f64) {
        let lo = all.iter().map(sel).fold(f64::INFINITY, f64::min);
        let hi = all.iter().map(sel).fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi.is_finite() {
            let (lo, hi) = (lo.log10().floor(), hi.log10().ceil());
            (lo, if hi > lo { hi } else { lo + 1.0 })
        } else {
            (0.0, 1.0)
        }
    };
    let (x_lo, x_hi) = bounds(|p| p.0);
    let (y_lo, y_hi) = bounds(|p| p.1);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x.log10() - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| TOP + (y_hi - y.log10()) / (y_hi - y_lo) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for d in (x_lo as i32)..=(x_hi as i32) {
        let x = LEFT + (d as f64 - x_lo) / (x_hi - x_lo) * plot_w;
        let _ = writeln!(
            s,
            r##"<line x1="{x:.1}" y1="{TOP}" x2="{x:.1}" y2="{:.1}" stroke="#dddddd"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">1e{d}</text>"##,
            TOP + plot_h,
            TOP + plot_h + 18.0
        );
    }
    for d in (y_lo as i32)..=(y_hi as i32) {
        let y = TOP + (y_hi - d as f64) / (y_hi - y_lo) * plot_h;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">1e{d}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">iteration k</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| positive(p))
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 25.0,
            lx + 32.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
