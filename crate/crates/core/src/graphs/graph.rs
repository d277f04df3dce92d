//! Graph data model and adjacency normalization.

use crate::error::{MhcError, Result};
use crate::linalg::spectral::SymOp;
use crate::linalg::tensor::Tensor;

/// Train/val/test node masks; pairwise disjoint when present.
#[derive(Clone, Debug, Default)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn count(mask: &[bool]) -> usize {
        mask.iter().filter(|&&b| b).count()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.train.len() != n || self.val.len() != n || self.test.len() != n {
            return Err(MhcError::Dataset("mask length differs from num_nodes".into()));
        }
        for i in 0..n {
            let overlaps = (self.train[i] && self.val[i])
                || (self.train[i] && self.test[i])
                || (self.val[i] && self.test[i]);
            if overlaps {
                return Err(MhcError::Dataset(format!("masks overlap at node {i}")));
            }
        }
        Ok(())
    }
}

/// Undirected graph. Edges are stored once as (i, j) with i < j, sorted and
/// deduplicated; self-loops are never stored (normalization adds them back as
/// a switch).
#[derive(Clone, Debug)]
pub struct Graph {
    pub name: String,
    pub num_nodes: usize,
    pub edges: Vec<(u32, u32)>,
    pub features: Option<Tensor>,
    pub labels: Option<Vec<usize>>,
    pub masks: Option<Masks>,
}

/// Bookkeeping from edge-list ingestion.
#[derive(Clone, Copy, Debug, Default)]
pub struct IngestStats {
    pub self_loops_dropped: usize,
    pub duplicates_merged: usize,
}

impl Graph {
    /// Build from a raw edge list, merging reversed/duplicate pairs and
    /// dropping self-loops. Indices are validated against `num_nodes`.
    pub fn from_edge_list(
        name: impl Into<String>,
        num_nodes: usize,
        raw: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<(Graph, IngestStats)> {
        let mut stats = IngestStats::default();
        let mut edges: Vec<(u32, u32)> = Vec::new();
        for (a, b) in raw {
            if a as usize >= num_nodes || b as usize >= num_nodes {
                return Err(MhcError::Dataset(format!(
                    "edge ({a}, {b}) out of range for {num_nodes} nodes"
                )));
            }
            if a == b {
                stats.self_loops_dropped += 1;
                continue;
            }
            edges.push(if a < b { (a, b) } else { (b, a) });
        }
        edges.sort_unstable();
        let before = edges.len();
        edges.dedup();
        stats.duplicates_merged = before - edges.len();
        let g = Graph { name: name.into(), num_nodes, edges, features: None, labels: None, masks: None };
        Ok((g, stats))
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_nodes];
        for &(a, b) in &self.edges {
            deg[a as usize] += 1;
            deg[b as usize] += 1;
        }
        deg
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|ls| ls.iter().max().map_or(0, |m| m + 1))
    }

    /// Neighbor lists in CSR form, neighbors sorted ascending.
    pub fn adjacency_list(&self) -> Csr {
        Csr::from_edges(self.num_nodes, &self.edges)
    }

    pub fn is_connected(&self) -> bool {
        if self.num_nodes == 0 {
            return true;
        }
        let csr = self.adjacency_list();
        let mut seen = vec![false; self.num_nodes];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &u in csr.neighbors(v) {
                let u = u as usize;
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    stack.push(u);
                }
            }
        }
        count == self.num_nodes
    }

    /// Fraction of undirected edges joining same-class endpoints.
    pub fn homophily(&self) -> Result<f64> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| MhcError::InvalidArgument("homophily needs labels".into()))?;
        if self.edges.is_empty() {
            return Err(MhcError::InvalidArgument("homophily needs at least one edge".into()));
        }
        let same = self
            .edges
            .iter()
            .filter(|&&(a, b)| labels[a as usize] == labels[b as usize])
            .count();
        Ok(same as f64 / self.edges.len() as f64)
    }

    /// Disjoint union; features/labels/masks are dropped.
    pub fn disjoint_union(&self, other: &Graph) -> Graph {
        let off = self.num_nodes as u32;
        let mut edges = self.edges.clone();
        edges.extend(other.edges.iter().map(|&(a, b)| (a + off, b + off)));
        Graph {
            name: format!("{}+{}", self.name, other.name),
            num_nodes: self.num_nodes + other.num_nodes,
            edges,
            features: None,
            labels: None,
            masks: None,
        }
    }

    /// Relabel nodes by `perm` (node i becomes perm[i]).
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.num_nodes {
            return Err(MhcError::InvalidArgument("permutation length mismatch".into()));
        }
        let raw: Vec<(u32, u32)> =
            self.edges.iter().map(|&(a, b)| (perm[a as usize] as u32, perm[b as usize] as u32)).collect();
        let (mut g, _) = Graph::from_edge_list(self.name.clone(), self.num_nodes, raw)?;
        if let Some(f) = &self.features {
            let (n, d) = f.dims2()?;
            let mut data = vec![0.0; n * d];
            for i in 0..n {
                data[perm[i] * d..(perm[i] + 1) * d].copy_from_slice(f.row(i));
            }
            g.features = Some(Tensor::new(vec![n, d], data)?);
        }
        if let Some(ls) = &self.labels {
            let mut out = vec![0usize; ls.len()];
            for i in 0..ls.len() {
                out[perm[i]] = ls[i];
            }
            g.labels = Some(out);
        }
        Ok(g)
    }
}

/// Compressed sparse neighbor lists (symmetric, no self-loops).
#[derive(Clone, Debug)]
pub struct Csr {
    pub offsets: Vec<usize>,
    pub targets: Vec<u32>,
}

impl Csr {
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Csr {
        let mut deg = vec![0usize; n];
        for &(a, b) in edges {
            deg[a as usize] += 1;
            deg[b as usize] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let mut targets = vec![0u32; offsets[n]];
        let mut cursor = offsets.clone();
        for &(a, b) in edges {
            targets[cursor[a as usize]] = b;
            cursor[a as usize] += 1;
            targets[cursor[b as usize]] = a;
            cursor[b as usize] += 1;
        }
        for i in 0..n {
            targets[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        Csr { offsets, targets }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }
}

/// Symmetric operator D^{-1/2} (A + sI) D^{-1/2} with the self-loop switch s.
///
/// Degrees count the self-loop when s = 1. Isolated nodes with s = 0 map to
/// zero rows.
#[derive(Debug)]
pub struct NormalizedAdjacency {
    csr: Csr,
    self_loops: bool,
    inv_sqrt_deg: Vec<f64>,
    pub degrees: Vec<f64>,
}

pub fn normalize_adjacency(g: &Graph, self_loops: bool) -> NormalizedAdjacency {
    let csr = g.adjacency_list();
    let n = g.num_nodes;
    let mut degrees = vec![0.0f64; n];
    for v in 0..n {
        degrees[v] = csr.degree(v) as f64 + if self_loops { 1.0 } else { 0.0 };
    }
    let inv_sqrt_deg = degrees.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    NormalizedAdjacency { csr, self_loops, inv_sqrt_deg, degrees }
}

impl NormalizedAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.csr.num_nodes()
    }

    pub fn has_self_loops(&self) -> bool {
        self.self_loops
    }

    pub fn csr(&self) -> &Csr {
        &self.csr
    }

    /// Y = A_norm X for row-major X of shape [N, d].
    /// Neighbor contributions accumulate in ascending node order, then the
    /// self-loop term; the fixed order keeps results bitwise reproducible.
    pub fn apply_rows(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = x.dims2()?;
        if n != self.num_nodes() {
            return Err(MhcError::shape("apply_rows", format!("{} nodes vs {} rows", self.num_nodes(), n)));
        }
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let wi = self.inv_sqrt_deg[i];
            if wi == 0.0 {
                continue;
            }
            let orow = &mut out[i * d..(i + 1) * d];
            for &j in self.csr.neighbors(i) {
                let j = j as usize;
                let w = wi * self.inv_sqrt_deg[j];
                let xrow = &x.data()[j * d..(j + 1) * d];
                for (o, &v) in orow.iter_mut().zip(xrow) {
                    *o += w * v;
                }
            }
            if self.self_loops {
                let w = wi * wi;
                let xrow = &x.data()[i * d..(i + 1) * d];
                for (o, &v) in orow.iter_mut().zip(xrow) {
                    *o += w * v;
                }
            }
        }
        Tensor::new(vec![n, d], out)
    }

    /// Dense copy for oracle comparisons.
    pub fn to_dense(&self) -> Tensor {
        let n = self.num_nodes();
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for &j in self.csr.neighbors(i) {
                let j = j as usize;
                t.set2(i, j, self.inv_sqrt_deg[i] * self.inv_sqrt_deg[j]);
            }
            if self.self_loops {
                t.set2(i, i, self.inv_sqrt_deg[i] * self.inv_sqrt_deg[i]);
            }
        }
        t
    }
}

impl SymOp for NormalizedAdjacency {
    fn dim(&self) -> usize {
        self.num_nodes()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.num_nodes();
        for i in 0..n {
            let wi = self.inv_sqrt_deg[i];
            let mut acc = 0.0;
            for &j in self.csr.neighbors(i) {
                acc += wi * self.inv_sqrt_deg[j as usize] * x[j as usize];
            }
            if self.self_loops {
                acc += wi * wi * x[i];
            }
            y[i] = acc;
        }
    }
}
