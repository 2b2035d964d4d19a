//! Communication graphs and interaction weight matrices.
//!
//! A weight matrix is symmetric with zero row sums, positive off-diagonal
//! entries exactly on graph edges, and all nonzero eigenvalues in (-1, 0).
//! The spectrum is computed once on construction.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{open01, Purpose, Streams};

/// Tolerance for symmetry, row sums and eigenvalue comparisons.
pub const SPECTRAL_TOL: f64 = 1e-10;

/// Target magnitude of the smallest eigenvalue in auto-scale mode.
pub const AUTO_SCALE_TARGET: f64 = 0.9;

/// Undirected simple graph on `m` nodes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    m: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Edges are stored as `(i, j)` with `i < j`, sorted. Connectivity is not
    /// required here; it is enforced when a weight matrix is built.
    pub fn new(m: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if m == 0 {
            return Err(Error::Topology("graph needs at least one node".into()));
        }
        let mut norm = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= m || b >= m {
                return Err(Error::Topology(format!("edge ({a},{b}) out of range for {m} nodes")));
            }
            if a == b {
                return Err(Error::Topology(format!("self-loop at node {a}")));
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        for w in norm.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Topology(format!("duplicate edge {:?}", w[0])));
            }
        }
        Ok(Graph { m, edges: norm })
    }

    pub fn ring(m: usize) -> Result<Self> {
        let edges: Vec<(usize, usize)> = match m {
            0 | 1 => vec![],
            2 => vec![(0, 1)],
            _ => (0..m).map(|i| (i, (i + 1) % m)).collect(),
        };
        Graph::new(m, &edges)
    }

    pub fn path(m: usize) -> Result<Self> {
        let edges: Vec<(usize, usize)> = (1..m).map(|i| (i - 1, i)).collect();
        Graph::new(m, &edges)
    }

    pub fn complete(m: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                edges.push((i, j));
            }
        }
        Graph::new(m, &edges)
    }

    /// G(m, p) graph, redrawn until connected or `max_tries` is exhausted.
    pub fn erdos_renyi(m: usize, p: f64, seed: u64, max_tries: usize) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter(format!("edge probability {p} not in (0, 1]")));
        }
        let streams = Streams::new(seed, 0);
        for attempt in 0..max_tries.max(1) {
            let mut rng = streams.stream(0, attempt, Purpose::Topology);
            let mut edges = Vec::new();
            for i in 0..m {
                for j in i + 1..m {
                    if open01(&mut rng) < p {
                        edges.push((i, j));
                    }
                }
            }
            let g = Graph::new(m, &edges)?;
            if g.is_connected() {
                return Ok(g);
            }
        }
        Err(Error::Topology(format!(
            "no connected G({m}, {p}) graph found in {max_tries} attempts"
        )))
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.m];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.m];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.m];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `w_ij = scale / (1 + max(deg_i, deg_j))`.
    Metropolis,
    /// `w_ij = a * scale` on every edge.
    Uniform(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scale {
    Fixed(f64),
    /// Largest scale <= 1 keeping the smallest eigenvalue at or above `-AUTO_SCALE_TARGET`.
    Auto,
}

/// Result of recomputing the spectrum of a candidate weight matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub ok: bool,
    pub delta2: f64,
    pub delta_n: f64,
    pub contraction_norm: f64,
    /// Eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
    pub violations: Vec<String>,
}

fn sorted_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Check every structural and spectral condition on `w`.
///
/// Asymmetry, nonzero row sums or non-finite entries are errors; eigenvalue
/// and sign conditions are reported through `ok` and `violations`.
pub fn spectral_check(w: &DMatrix<f64>) -> Result<SpectralReport> {
    let m = w.nrows();
    if m == 0 || w.ncols() != m {
        return Err(Error::Validation(vec![format!("matrix is {}x{}, expected square", w.nrows(), w.ncols())]));
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation(vec!["non-finite entry".into()]));
    }
    let mut hard = Vec::new();
    let asym = (w - w.transpose()).abs().max();
    if asym > SPECTRAL_TOL {
        hard.push(format!("not symmetric (defect {asym:.3e})"));
    }
    let row_defect = (0..m).map(|i| w.row(i).sum().abs()).fold(0.0, f64::max);
    if row_defect > SPECTRAL_TOL {
        hard.push(format!("row sums not zero (max {row_defect:.3e})"));
    }
    if !hard.is_empty() {
        return Err(Error::Validation(hard));
    }

    let mut violations = Vec::new();
    for i in 0..m {
        for j in 0..m {
            if i != j && w[(i, j)] < -SPECTRAL_TOL {
                violations.push(format!("negative off-diagonal entry w[{i}][{j}] = {}", w[(i, j)]));
            }
        }
    }
    let ev = sorted_eigenvalues(w);
    let top = ev[m - 1];
    if top.abs() > SPECTRAL_TOL {
        violations.push(format!("largest eigenvalue {top:.3e} is not 0"));
    }
    let (delta2, delta_n) = if m >= 2 { (ev[m - 2], ev[0]) } else { (0.0, 0.0) };
    if m >= 2 {
        if delta2 >= -SPECTRAL_TOL {
            violations.push(format!("second eigenvalue {delta2:.3e} is not < 0 (graph disconnected)"));
        }
        if delta_n <= -1.0 + SPECTRAL_TOL {
            violations.push(format!("smallest eigenvalue {delta_n:.6} is not > -1"));
        }
    }
    let shifted = DMatrix::identity(m, m) + w - DMatrix::from_element(m, m, 1.0 / m as f64);
    let contraction_norm = sorted_eigenvalues(&shifted).iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m >= 2 && contraction_norm >= 1.0 - SPECTRAL_TOL {
        violations.push(format!("contraction norm {contraction_norm:.6} is not < 1"));
    }
    Ok(SpectralReport {
        ok: violations.is_empty(),
        delta2,
        delta_n,
        contraction_norm,
        eigenvalues: ev,
        violations,
    })
}

/// Validated interaction matrix with its cached spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    entries: DMatrix<f64>,
    report: SpectralReport,
    wbar: f64,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl WeightMatrix {
    /// Validate an explicit matrix.
    pub fn from_entries(entries: DMatrix<f64>) -> Result<Self> {
        let report = spectral_check(&entries)?;
        if !report.ok {
            let only_scale = report
                .violations
                .iter()
                .all(|v| v.starts_with("smallest eigenvalue") || v.starts_with("contraction norm"));
            if report.delta_n <= -1.0 + SPECTRAL_TOL && only_scale {
                return Err(Error::Scaling {
                    delta_n: report.delta_n,
                    suggested_scale: AUTO_SCALE_TARGET / report.delta_n.abs(),
                });
            }
            return Err(Error::Validation(report.violations));
        }
        let m = entries.nrows();
        let wbar = (0..m).map(|i| entries[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        let neighbors = (0..m)
            .map(|i| {
                (0..m)
                    .filter(|&j| j != i && entries[(i, j)] > 0.0)
                    .map(|j| (j, entries[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(WeightMatrix { entries, report, wbar, neighbors })
    }

    /// Row-major list of rows, as written in a config file.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Validation(vec!["rows have inconsistent lengths".into()]));
        }
        Self::from_entries(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
    }

    pub fn m(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Off-diagonal nonzeros of row `i` as `(j, w_ij)`.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn delta2(&self) -> f64 {
        self.report.delta2
    }

    pub fn delta_n(&self) -> f64 {
        self.report.delta_n
    }

    /// Smallest diagonal magnitude.
    pub fn wbar(&self) -> f64 {
        self.wbar
    }

    pub fn contraction_norm(&self) -> f64 {
        self.report.contraction_norm
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.report.eigenvalues
    }

    pub fn report(&self) -> &SpectralReport {
        &self.report
    }
}

fn raw_weights(graph: &Graph, scheme: WeightScheme, scale: f64) -> DMatrix<f64> {
    let m = graph.m();
    let deg = graph.degrees();
    let mut w = DMatrix::zeros(m, m);
    for &(a, b) in graph.edges() {
        let x = match scheme {
            WeightScheme::Metropolis => scale / (1.0 + deg[a].max(deg[b]) as f64),
            WeightScheme::Uniform(a) => a * scale,
        };
        w[(a, b)] = x;
        w[(b, a)] = x;
    }
    for i in 0..m {
        let s: f64 = w.row(i).sum();
        w[(i, i)] = -s;
    }
    w
}

pub fn build_weight_matrix(graph: &Graph, scheme: WeightScheme, scale: Scale) -> Result<WeightMatrix> {
    if graph.m() >= 2 && !graph.is_connected() {
        return Err(Error::Topology("graph is not connected".into()));
    }
    if let WeightScheme::Uniform(a) = scheme {
        let dmax = graph.degrees().into_iter().max().unwrap_or(0) as f64;
        if !(a > 0.0) || a * dmax >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "uniform weight {a} must be positive with a * max degree < 1"
            )));
        }
    }
    let s = match scale {
        Scale::Fixed(s) => {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::InvalidParameter(format!("scale {s} not in (0, 1]")));
            }
            s
        }
        Scale::Auto => {
            if graph.m() < 2 {
                1.0
            } else {
                let ev = sorted_eigenvalues(&raw_weights(graph, scheme, 1.0));
                (AUTO_SCALE_TARGET / ev[0].abs()).min(1.0)
            }
        }
    };
    WeightMatrix::from_entries(raw_weights(graph, scheme, s))
}
