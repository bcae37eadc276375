//! Areal adjacency structure and Moran's I.

use std::collections::{BTreeSet, VecDeque};
use std::io::Read;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::normal_sf;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("region index {index} outside 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("self-loop at region {0}")]
    SelfLoop(usize),
    #[error("edge set is empty")]
    EmptyEdgeSet,
    #[error("graph is disconnected: region {region} is not reachable from region 1")]
    Disconnected { region: usize },
    #[error("number of regions must be at least 2, got {0}")]
    TooFewRegions(usize),
    #[error("values have length {actual}, graph has {expected} regions")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("values have zero variance")]
    ZeroVariance,
    #[error("adjacency file: {0}")]
    Parse(String),
}

/// Undirected, connected region adjacency with binary weights.
///
/// Regions are indexed `0..n` internally; files use 1-based indices.
#[derive(Debug)]
pub struct ArealGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    queries: AtomicUsize,
}

impl Clone for ArealGraph {
    fn clone(&self) -> Self {
        Self {
            n: self.n,
            edges: self.edges.clone(),
            neighbors: self.neighbors.clone(),
            queries: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for ArealGraph {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.edges == other.edges
    }
}

impl ArealGraph {
    /// Builds a graph from 1-based undirected edges.
    ///
    /// Duplicates and reversed duplicates collapse to one edge.
    pub fn from_edges(edges: &[(usize, usize)], n: usize) -> Result<Self, GraphError> {
        if n < 2 {
            return Err(GraphError::TooFewRegions(n));
        }
        if edges.is_empty() {
            return Err(GraphError::EmptyEdgeSet);
        }
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            for index in [i, j] {
                if index == 0 || index > n {
                    return Err(GraphError::IndexOutOfRange { index, n });
                }
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            set.insert((i.min(j) - 1, i.max(j) - 1));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let graph = Self { n, edges, neighbors, queries: AtomicUsize::new(0) };
        graph.check_connected()?;
        Ok(graph)
    }

    /// Reads a CSV adjacency file with header `i,j` and 1-based indices.
    pub fn from_csv<R: Read>(reader: R, n: usize) -> Result<Self, GraphError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| GraphError::Parse(e.to_string()))?.clone();
        if headers.len() != 2 || &headers[0] != "i" || &headers[1] != "j" {
            return Err(GraphError::Parse(format!("expected header `i,j`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let mut edges = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| GraphError::Parse(e.to_string()))?;
            let parse = |k: usize| -> Result<usize, GraphError> {
                record[k].parse::<usize>().map_err(|_| {
                    GraphError::Parse(format!("row {}: `{}` is not a region index", line + 2, &record[k]))
                })
            };
            edges.push((parse(0)?, parse(1)?));
        }
        Self::from_edges(&edges, n)
    }

    /// Cycle graph on `n >= 3` regions.
    pub fn ring(n: usize) -> Result<Self, GraphError> {
        let edges: Vec<(usize, usize)> = (1..=n).map(|i| (i, i % n + 1)).collect();
        Self::from_edges(&edges, n)
    }

    fn check_connected(&self) -> Result<(), GraphError> {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(region) => Err(GraphError::Disconnected { region: region + 1 }),
            None => Ok(()),
        }
    }

    fn touch(&self) {
        self.queries.fetch_add(1, Ordering::Relaxed);
    }

    /// Number of structural queries served so far (edges, neighbors, weights).
    #[doc(hidden)]
    pub fn structure_queries(&self) -> usize {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Undirected edges `(i, j)` with `i < j`, 0-based.
    pub fn edges(&self) -> &[(usize, usize)] {
        self.touch();
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.touch();
        &self.neighbors[i]
    }

    /// Degrees `m_i`.
    pub fn degrees(&self) -> Vec<usize> {
        self.touch();
        self.neighbors.iter().map(Vec::len).collect()
    }

    /// Binary symmetric weight matrix `W`.
    pub fn weight_matrix(&self) -> DMatrix<f64> {
        self.touch();
        let mut w = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            w[(i, j)] = 1.0;
            w[(j, i)] = 1.0;
        }
        w
    }

    /// Diagonal degree matrix `M`.
    pub fn degree_matrix(&self) -> DMatrix<f64> {
        let d: Vec<f64> = self.degrees().into_iter().map(|m| m as f64).collect();
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d))
    }

    /// `M - ρW` as a dense matrix.
    pub fn car_kernel(&self, rho: f64) -> DMatrix<f64> {
        self.touch();
        let mut k = DMatrix::zeros(self.n, self.n);
        for (i, list) in self.neighbors.iter().enumerate() {
            k[(i, i)] = list.len() as f64;
        }
        for &(i, j) in &self.edges {
            k[(i, j)] = -rho;
            k[(j, i)] = -rho;
        }
        k
    }

    /// `xᵀ(M - ρW)y` in O(n + |E|).
    pub fn car_bilinear(&self, rho: f64, x: &[f64], y: &[f64]) -> f64 {
        self.touch();
        let mut total = 0.0;
        for (i, list) in self.neighbors.iter().enumerate() {
            total += list.len() as f64 * x[i] * y[i];
        }
        let mut cross = 0.0;
        for &(i, j) in &self.edges {
            cross += x[i] * y[j] + x[j] * y[i];
        }
        total - rho * cross
    }

    /// Returns the graph with regions relabelled so that new region `k` is old region `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; self.n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let edges: Vec<(usize, usize)> =
            self.edges.iter().map(|&(i, j)| (inverse[i] + 1, inverse[j] + 1)).collect();
        Self::from_edges(&edges, self.n).expect("permutation preserves validity")
    }
}

/// Alternative hypothesis used for the Moran's I p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoranResult {
    pub statistic: f64,
    pub expected: f64,
    pub variance: f64,
    pub z_score: f64,
    pub p_value: f64,
    pub alternative: Alternative,
}

/// Moran's I with moments under the normality assumption.
pub fn moran_i(values: &[f64], graph: &ArealGraph) -> Result<MoranResult, GraphError> {
    let n = graph.n();
    if values.len() != n {
        return Err(GraphError::LengthMismatch { expected: n, actual: values.len() });
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let dev: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let ss: f64 = dev.iter().map(|d| d * d).sum();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if ss <= 1e-24 * scale * scale * nf {
        return Err(GraphError::ZeroVariance);
    }
    let edges = graph.edges();
    let s0 = 2.0 * edges.len() as f64;
    let cross: f64 = edges.iter().map(|&(i, j)| 2.0 * dev[i] * dev[j]).sum();
    let statistic = nf / s0 * cross / ss;

    // binary symmetric weights: S1 = 2 S0, S2 = Σ (2 m_i)^2
    let s1 = 2.0 * s0;
    let s2: f64 = graph.degrees().iter().map(|&m| (2.0 * m as f64).powi(2)).sum();
    let expected = -1.0 / (nf - 1.0);
    let second_moment = (nf * nf * s1 - nf * s2 + 3.0 * s0 * s0) / ((nf * nf - 1.0) * s0 * s0);
    let variance = second_moment - expected * expected;
    let z_score = (statistic - expected) / variance.sqrt();
    let p_value = (2.0 * normal_sf(z_score.abs())).min(1.0);
    Ok(MoranResult { statistic, expected, variance, z_score, p_value, alternative: Alternative::TwoSided })
}

/// Moran's I summarized over independent years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoranSummary {
    pub mean_statistic: f64,
    /// Stouffer combination `Σ z_t / √T`.
    pub combined_z: f64,
    pub p_value: f64,
    pub years: usize,
    pub alternative: Alternative,
}

pub fn summarize_moran(per_year: &[MoranResult]) -> Option<MoranSummary> {
    if per_year.is_empty() {
        return None;
    }
    let t = per_year.len() as f64;
    let mean_statistic = per_year.iter().map(|r| r.statistic).sum::<f64>() / t;
    let combined_z = per_year.iter().map(|r| r.z_score).sum::<f64>() / t.sqrt();
    let p_value = (2.0 * normal_sf(combined_z.abs())).min(1.0);
    Some(MoranSummary {
        mean_statistic,
        combined_z,
        p_value,
        years: per_year.len(),
        alternative: Alternative::TwoSided,
    })
}
