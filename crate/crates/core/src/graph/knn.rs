use super::{FeatureMatrix, SparseGraph};
use crate::error::{Error, Result};

/// Brute-force cosine KNN graph. Each node proposes its `k` most similar
/// nodes (ties go to the smaller index); the graph is the undirected union
/// of all proposals, so degrees are at least `k`.
pub fn build_knn_graph(features: &FeatureMatrix, k: usize) -> Result<SparseGraph> {
    let n = features.n();
    if k == 0 || k >= n {
        return Err(Error::Graph(format!(
            "k must satisfy 1 <= k < n, got k={k}, n={n}"
        )));
    }
    if let Some(i) = features.first_zero_row() {
        return Err(Error::Graph(format!("node {i} has a zero feature vector")));
    }
    let dim = features.dim();
    let mut unit = Vec::with_capacity(n * dim);
    for i in 0..n {
        let row = features.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        unit.extend(row.iter().map(|v| v / norm));
    }
    let unit_row = |i: usize| &unit[i * dim..(i + 1) * dim];

    let mut edges = Vec::with_capacity(n * k);
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        scored.clear();
        let a = unit_row(i);
        for j in (0..n).filter(|&j| j != i) {
            let sim: f64 = a.iter().zip(unit_row(j)).map(|(x, y)| x * y).sum();
            scored.push((sim, j));
        }
        scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        edges.extend(scored[..k].iter().map(|&(_, j)| (i, j)));
    }
    SparseGraph::from_edges(n, &edges)
}
