//! Communication graphs and Metropolis-Hastings mixing matrices.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{CounterRng, StreamTag};

/// Tolerance on row/column sums and symmetry of a mixing matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Absolute tolerance of the spectral radius computation.
pub const SPECTRAL_TOL: f64 = 1e-10;
/// Iteration cap for power iteration.
pub const SPECTRAL_MAX_ITER: usize = 100_000;

/// Graph family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TopologyKind {
    Path,
    Cycle,
    #[serde(rename = "mesh2d")]
    Mesh2D { rows: usize, cols: usize },
    Complete,
    Custom { edges: Vec<(usize, usize)> },
}

impl TopologyKind {
    /// Short family name used in labels and file names.
    pub fn name(&self) -> &'static str {
        match self {
            TopologyKind::Path => "path",
            TopologyKind::Cycle => "cycle",
            TopologyKind::Mesh2D { .. } => "mesh2d",
            TopologyKind::Complete => "complete",
            TopologyKind::Custom { .. } => "custom",
        }
    }
}

/// Static undirected connected graph on vertices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    kind: TopologyKind,
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a graph of the given family on `n` vertices.
    pub fn build(kind: TopologyKind, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Topology(format!("need at least 2 agents, got {n}")));
        }
        let raw: Vec<(usize, usize)> = match &kind {
            TopologyKind::Path => (0..n - 1).map(|i| (i, i + 1)).collect(),
            TopologyKind::Cycle => (0..n).map(|i| (i, (i + 1) % n)).collect(),
            TopologyKind::Mesh2D { rows, cols } => {
                let (rows, cols) = (*rows, *cols);
                if rows == 0 || cols == 0 || rows * cols != n {
                    return Err(Error::Topology(format!(
                        "mesh {rows}x{cols} does not have {n} vertices"
                    )));
                }
                let mut e = Vec::new();
                for r in 0..rows {
                    for c in 0..cols {
                        let id = r * cols + c;
                        if c + 1 < cols {
                            e.push((id, id + 1));
                        }
                        if r + 1 < rows {
                            e.push((id, id + cols));
                        }
                    }
                }
                e
            }
            TopologyKind::Complete => (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .collect(),
            TopologyKind::Custom { edges } => edges.clone(),
        };

        let mut set = BTreeSet::new();
        for &(a, b) in &raw {
            if a >= n || b >= n {
                return Err(Error::Topology(format!(
                    "edge ({a},{b}) references a vertex outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::Topology(format!("self-loop at vertex {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        let topo = Self {
            kind,
            n,
            edges,
            neighbors,
        };
        if !topo.is_connected() {
            return Err(Error::Topology(format!(
                "{} graph on {n} vertices is not connected",
                topo.kind.name()
            )));
        }
        Ok(topo)
    }

    pub fn kind(&self) -> &TopologyKind {
        &self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Undirected edges as `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn is_connected(&self) -> bool {
        check_connected(self.n, &self.edges)
    }

    /// `path:10`, `mesh2d:5x5`, ... (the form accepted by [`TopologySpec::parse`]).
    pub fn label(&self) -> String {
        match &self.kind {
            TopologyKind::Mesh2D { rows, cols } => format!("mesh2d:{rows}x{cols}"),
            k => format!("{}:{}", k.name(), self.n),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// True iff a breadth-first search from vertex 0 reaches every vertex.
pub fn check_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    if n == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                queue.push_back(u);
            }
        }
    }
    count == n
}

/// Compact `kind:n` description of a topology, as written in configs and on
/// the command line: `path:10`, `cycle:25`, `complete:5`, `mesh2d:5x5`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub n: usize,
}

impl TopologySpec {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Topology(format!("cannot parse topology `{s}` (expected kind:n or mesh2d:RxC)"));
        let (kind, rest) = s.trim().split_once(':').ok_or_else(bad)?;
        match kind.to_ascii_lowercase().as_str() {
            "mesh2d" | "mesh" => {
                let (r, c) = rest.split_once(['x', 'X']).ok_or_else(bad)?;
                let rows: usize = r.parse().map_err(|_| bad())?;
                let cols: usize = c.parse().map_err(|_| bad())?;
                Ok(Self {
                    kind: TopologyKind::Mesh2D { rows, cols },
                    n: rows * cols,
                })
            }
            other => {
                let n: usize = rest.parse().map_err(|_| bad())?;
                let kind = match other {
                    "path" => TopologyKind::Path,
                    "cycle" => TopologyKind::Cycle,
                    "complete" => TopologyKind::Complete,
                    _ => return Err(bad()),
                };
                Ok(Self { kind, n })
            }
        }
    }

    pub fn build(&self) -> Result<Topology> {
        Topology::build(self.kind.clone(), self.n)
    }
}

/// Spectral radius of the deviation operator and the resulting gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralGap {
    pub rho_w: f64,
    pub gap: f64,
}

/// Symmetric doubly stochastic mixing matrix with its consensus contraction
/// factor `rho_w`.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    w: Array2<f64>,
    rho_w: f64,
    // Non-zero entries per row, used by the mixing step.
    rows: Vec<Vec<(usize, f64)>>,
}

impl WeightMatrix {
    /// Validates an explicit matrix (square, entries in [0,1], symmetric,
    /// doubly stochastic) and computes its spectral radius.
    pub fn from_matrix(w: Array2<f64>) -> Result<Self> {
        let (n, m) = w.dim();
        if n == 0 || n != m {
            return Err(Error::WeightMatrix(format!("expected a non-empty square matrix, got {n}x{m}")));
        }
        for ((i, j), &v) in w.indexed_iter() {
            if !v.is_finite() || !(-STOCHASTIC_TOL..=1.0 + STOCHASTIC_TOL).contains(&v) {
                return Err(Error::WeightMatrix(format!("entry ({i},{j}) = {v} outside [0,1]")));
            }
            if (v - w[(j, i)]).abs() > STOCHASTIC_TOL {
                return Err(Error::WeightMatrix(format!("not symmetric at ({i},{j})")));
            }
        }
        for (i, row) in w.rows().into_iter().enumerate() {
            let s = row.sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::WeightMatrix(format!("row {i} sums to {s}")));
            }
        }
        for (j, col) in w.columns().into_iter().enumerate() {
            let s = col.sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::WeightMatrix(format!("column {j} sums to {s}")));
            }
        }
        let SpectralGap { rho_w, .. } = spectral_gap(&w)?;
        let rows = w
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        Ok(Self { w, rho_w, rows })
    }

    /// `W = I`: agents never communicate.
    pub fn identity(n: usize) -> Result<Self> {
        Self::from_matrix(Array2::eye(n))
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn rho_w(&self) -> f64 {
        self.rho_w
    }

    pub fn gap(&self) -> f64 {
        1.0 - self.rho_w
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    /// `out = W * input` for row-major `n x d` blocks stored contiguously.
    pub fn mix_into(&self, input: &[f64], out: &mut [f64], d: usize) {
        debug_assert_eq!(input.len(), self.n() * d);
        debug_assert_eq!(out.len(), self.n() * d);
        for (i, row) in self.rows.iter().enumerate() {
            let dst = &mut out[i * d..(i + 1) * d];
            dst.fill(0.0);
            for &(j, wij) in row {
                let src = &input[j * d..(j + 1) * d];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += wij * s;
                }
            }
        }
    }
}

/// Metropolis-Hastings weights: `w_ij = 1 / (1 + max(deg_i, deg_j))` on
/// edges, diagonal filled so each row sums to one.
pub fn metropolis_weights(t: &Topology) -> Result<WeightMatrix> {
    let n = t.n();
    let mut w = Array2::<f64>::zeros((n, n));
    for &(a, b) in t.edges() {
        let v = 1.0 / (1.0 + t.degree(a).max(t.degree(b)) as f64);
        w[(a, b)] = v;
        w[(b, a)] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    WeightMatrix::from_matrix(w)
}

/// Largest absolute eigenvalue of `W - 11ᵀ/n` by power iteration.
///
/// For symmetric `B`, `‖Bv‖` with `‖v‖ = 1` is the square root of the
/// Rayleigh quotient of `B²`, which increases monotonically to `ρ²` even when
/// `ρ` and `-ρ` are both eigenvalues. Iteration stops once the `B²`
/// eigen-residual drops below the tolerance.
pub fn spectral_gap(w: &Array2<f64>) -> Result<SpectralGap> {
    let n = w.nrows();
    let mut b = w.clone();
    b.mapv_inplace(|v| v - 1.0 / n as f64);
    if b.iter().all(|v| v.abs() <= f64::EPSILON) || n == 1 {
        return Ok(SpectralGap { rho_w: 0.0, gap: 1.0 });
    }

    let project = |v: &mut Array1<f64>| {
        let mean = v.mean().unwrap_or(0.0);
        v.mapv_inplace(|x| x - mean);
        let norm = v.dot(v).sqrt();
        if norm > 0.0 {
            v.mapv_inplace(|x| x / norm);
        }
        norm
    };

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut restart = 0u64;
    'restart: loop {
        let mut rng = CounterRng::for_draw(0x5eed, n, restart as usize, StreamTag::PowerIteration);
        let mut v = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
        if project(&mut v) == 0.0 {
            restart += 1;
            continue;
        }
        while iterations < SPECTRAL_MAX_ITER {
            iterations += 1;
            let bv = b.dot(&v);
            let rho = bv.dot(&bv).sqrt();
            if rho == 0.0 {
                // Start vector fell in the null space of a non-zero operator.
                restart += 1;
                if restart > 8 {
                    return Ok(SpectralGap { rho_w: 0.0, gap: 1.0 });
                }
                continue 'restart;
            }
            let b2v = b.dot(&bv);
            let rho_sq = rho * rho;
            let r = &b2v - &(rho_sq * &v);
            residual = r.dot(&r).sqrt();
            // Some eigenvalue of B² lies within `residual` of rho², so rho is
            // within residual / (2 rho) of an eigenvalue magnitude of B.
            if residual <= 2.0 * SPECTRAL_TOL * rho {
                let rho_w = rho.min(1.0);
                return Ok(SpectralGap {
                    rho_w,
                    gap: 1.0 - rho_w,
                });
            }
            v = b2v;
            if project(&mut v) == 0.0 {
                restart += 1;
                continue 'restart;
            }
        }
        return Err(Error::NoConvergence {
            iterations,
            residual,
        });
    }
}
