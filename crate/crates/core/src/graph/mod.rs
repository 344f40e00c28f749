//! Similarity graphs, exact-distance hop indexes and datasets.

mod dataset;
mod hops;
mod knn;

pub use dataset::{Dataset, FeatureMatrix};
pub use hops::{build_hop_index, khop_neighbors, HopIndex, DEFAULT_MAX_ORDER_CAP};
pub use knn::build_knn_graph;

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Undirected, unweighted graph in compressed row form. Rows are sorted,
/// symmetric, and free of self-loops and duplicates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseGraph {
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl SparseGraph {
    /// Builds from an undirected edge list; orientation and duplicates are
    /// ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Graph(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                return Err(Error::Graph(format!("self-loop at node {u}")));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for mut row in adj {
            row.sort_unstable();
            row.dedup();
            col_indices.extend(row);
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            row_offsets,
            col_indices,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.col_indices.len() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[v]..self.row_offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors(v).len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    /// Each edge once as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for u in 0..self.num_nodes() {
            out.extend(
                self.neighbors(u)
                    .iter()
                    .filter(|&&v| v > u)
                    .map(|&v| (u, v)),
            );
        }
        out
    }

    /// `u<TAB>v` per line, `u < v`, sorted.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for (u, v) in self.edges() {
            let _ = writeln!(s, "{u}\t{v}");
        }
        s
    }

    pub fn from_edge_list(n: usize, text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let mut next = || -> Result<usize> {
                parts
                    .next()
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| Error::Data(format!("edge list line {}: {line:?}", lineno + 1)))
            };
            edges.push((next()?, next()?));
        }
        Self::from_edges(n, &edges)
    }
}
