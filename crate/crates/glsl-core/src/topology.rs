//! Node layouts and WSN adjacency construction: complete graph, coverage
//! radius, and directed TopK nearest neighbors, plus the Euclidean distance
//! matrix used by the internode injector.

use std::path::Path;

use crate::error::{GlslError, Result};

#[derive(Debug, Clone)]
pub struct NodeLayout {
    coords: Vec<(f64, f64)>,
    pub bounds: (f64, f64),
}

impl NodeLayout {
    pub fn new(coords: Vec<(f64, f64)>, bounds: (f64, f64)) -> Result<Self> {
        for (i, (x, y)) in coords.iter().enumerate() {
            if *x < 0.0 || *x > bounds.0 || *y < 0.0 || *y > bounds.1 {
                return Err(GlslError::Config(format!(
                    "node {i} at ({x}, {y}) outside bounds {:?}",
                    bounds
                )));
            }
        }
        Ok(NodeLayout { coords, bounds })
    }

    /// Bounds inferred from the coordinate extents.
    pub fn from_coords(coords: Vec<(f64, f64)>) -> Self {
        let bx = coords.iter().map(|c| c.0).fold(0.0_f64, f64::max);
        let by = coords.iter().map(|c| c.1).fold(0.0_f64, f64::max);
        NodeLayout { coords, bounds: (bx, by) }
    }

    /// Parse a layout file of `node_id x y` lines. Node ids order the rows.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut entries: Vec<(u64, f64, f64)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<f64> {
                tok.and_then(|t| t.parse().ok()).ok_or_else(|| {
                    GlslError::Config(format!("layout line {}: bad field", lineno + 1))
                })
            };
            let id = parse(it.next())? as u64;
            let x = parse(it.next())?;
            let y = parse(it.next())?;
            entries.push((id, x, y));
        }
        if entries.is_empty() {
            return Err(GlslError::Config("layout file has no entries".into()));
        }
        entries.sort_by_key(|e| e.0);
        Ok(NodeLayout::from_coords(
            entries.into_iter().map(|(_, x, y)| (x, y)).collect(),
        ))
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn subset(&self, idx: &[usize]) -> NodeLayout {
        NodeLayout {
            coords: idx.iter().map(|i| self.coords[*i]).collect(),
            bounds: self.bounds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    /// Indices of the k nearest neighbors of `node`, ascending by distance,
    /// ties broken by lower index. `node` itself is excluded.
    pub fn k_nearest(&self, node: usize, k: usize) -> Vec<usize> {
        let mut others: Vec<usize> = (0..self.n).filter(|j| *j != node).collect();
        others.sort_by(|a, b| {
            self.get(node, *a)
                .partial_cmp(&self.get(node, *b))
                .unwrap()
                .then(a.cmp(b))
        });
        others.truncate(k);
        others
    }
}

pub fn distance_matrix(layout: &NodeLayout) -> DistanceMatrix {
    let n = layout.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (xi, yi) = layout.coords()[i];
            let (xj, yj) = layout.coords()[j];
            d[i * n + j] = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
        }
    }
    DistanceMatrix { n, d }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    n: usize,
    a: Vec<bool>,
    pub self_loops: bool,
}

impl Adjacency {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.a[i * self.n + j]
    }

    /// Neighborhood mask row-major, as consumed by the GNN kernels.
    pub fn mask(&self) -> &[bool] {
        &self.a
    }

    pub fn edge_count(&self) -> usize {
        self.a.iter().filter(|v| **v).count()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Adjacency from an explicit row-major mask.
    pub fn from_mask(n: usize, a: Vec<bool>, self_loops: bool) -> Result<Adjacency> {
        if a.len() != n * n {
            return Err(GlslError::Config(format!(
                "adjacency mask has {} entries, expected {}",
                a.len(),
                n * n
            )));
        }
        Ok(Adjacency { n, a, self_loops })
    }

    /// Self-loops-only adjacency (identity): no cross-node information flow.
    pub fn identity(n: usize) -> Adjacency {
        let mut a = vec![false; n * n];
        for i in 0..n {
            a[i * n + i] = true;
        }
        Adjacency { n, a, self_loops: true }
    }

    /// Restrict to a node subset, keeping intra-subset edges only.
    pub fn subset(&self, idx: &[usize]) -> Adjacency {
        let m = idx.len();
        let mut a = vec![false; m * m];
        for (r, i) in idx.iter().enumerate() {
            for (c, j) in idx.iter().enumerate() {
                a[r * m + c] = self.get(*i, *j);
            }
        }
        Adjacency { n: m, a, self_loops: self.self_loops }
    }
}

/// Every node is everyone's neighbor. Self-loops on by default for GNN use.
pub fn build_complete(n: usize, self_loops: bool) -> Adjacency {
    let mut a = vec![true; n * n];
    if !self_loops {
        for i in 0..n {
            a[i * n + i] = false;
        }
    }
    Adjacency { n, a, self_loops }
}

/// Edge iff the Euclidean distance is within the coverage radius `cd`.
pub fn build_coverage(layout: &NodeLayout, cd: f64, self_loops: bool) -> Adjacency {
    let n = layout.len();
    let d = distance_matrix(layout);
    let mut a = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                a[i * n + j] = self_loops;
            } else {
                a[i * n + j] = d.get(i, j) <= cd;
            }
        }
    }
    Adjacency { n, a, self_loops }
}

/// Directed k-nearest-neighbor adjacency; each row has exactly `k`
/// off-diagonal edges, ties broken by lower node index.
pub fn build_topk(layout: &NodeLayout, k: usize, self_loops: bool) -> Result<Adjacency> {
    let n = layout.len();
    if k == 0 || k > n.saturating_sub(1) {
        return Err(GlslError::Config(format!(
            "topk: k={k} out of range for {n} nodes"
        )));
    }
    let d = distance_matrix(layout);
    let mut a = vec![false; n * n];
    for i in 0..n {
        if self_loops {
            a[i * n + i] = true;
        }
        for j in d.k_nearest(i, k) {
            a[i * n + j] = true;
        }
    }
    Ok(Adjacency { n, a, self_loops })
}

/// Declarative topology choice, buildable against any layout (used by the
/// CLI config and per-cluster sub-topologies).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopologySpec {
    Complete,
    Coverage(f64),
    TopK(usize),
}

impl TopologySpec {
    pub fn build(&self, layout: &NodeLayout, self_loops: bool) -> Result<Adjacency> {
        match self {
            TopologySpec::Complete => Ok(build_complete(layout.len(), self_loops)),
            TopologySpec::Coverage(cd) => Ok(build_coverage(layout, *cd, self_loops)),
            TopologySpec::TopK(k) => build_topk(layout, (*k).min(layout.len().saturating_sub(1)).max(1), self_loops),
        }
    }
}
