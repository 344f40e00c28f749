//! Independent reference implementations shared by the integration tests.
//! Everything here works on plain nested vectors and dense matrices, never
//! on the tape or the sparse edge lists under test.

#![allow(dead_code)]

use nolgat::diffcore::ParamStore;
use nolgat::graph::SparseGraph;
use rand::Rng;

pub fn erdos_renyi(n: usize, p: f64, rng: &mut impl Rng) -> SparseGraph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    SparseGraph::from_edges(n, &edges).unwrap()
}

pub fn random_matrix(
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(lo..hi)).collect())
        .collect()
}

pub fn flatten(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

fn param(params: &ParamStore, name: &str) -> Vec<Vec<f64>> {
    let t = params.value(name).unwrap();
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.2 * x
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Dense GATv2 attention of one head: the full `n x n` score matrix, with
/// `-inf` outside `{v} ∪ neighborhoods[v]`, row-softmaxed.
pub fn dense_attention(
    params: &ParamStore,
    layer: &str,
    head: usize,
    h: &[Vec<f64>],
    neighborhoods: &[Vec<usize>],
) -> Vec<Vec<f64>> {
    let n = h.len();
    let w = param(params, &format!("{layer}.head{head}.w"));
    let a: Vec<f64> = param(params, &format!("{layer}.head{head}.a"))
        .into_iter()
        .flatten()
        .collect();
    let p = matmul(h, &w);
    let mut scores = vec![vec![f64::NEG_INFINITY; n]; n];
    for v in 0..n {
        let allowed = neighborhoods[v].iter().copied().chain(std::iter::once(v));
        for u in allowed {
            scores[v][u] = (0..a.len()).map(|k| a[k] * leaky(p[v][k] + p[u][k])).sum();
        }
    }
    for row in &mut scores {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = row.iter().map(|s| (s - max).exp()).sum();
        for s in row.iter_mut() {
            *s = (*s - max).exp() / total;
        }
    }
    scores
}

/// Dense GATv2 layer: per head `ELU(alpha P + b)`, concatenated or averaged.
pub fn dense_gatv2(
    params: &ParamStore,
    layer: &str,
    heads: usize,
    concat: bool,
    h: &[Vec<f64>],
    neighborhoods: &[Vec<usize>],
) -> Vec<Vec<f64>> {
    let n = h.len();
    let mut per_head = Vec::new();
    for k in 0..heads {
        let alpha = dense_attention(params, layer, k, h, neighborhoods);
        let w = param(params, &format!("{layer}.head{k}.w"));
        let b = &param(params, &format!("{layer}.head{k}.bias"))[0];
        let p = matmul(h, &w);
        let agg = matmul(&alpha, &p);
        per_head.push(
            agg.into_iter()
                .map(|row| {
                    row.iter()
                        .zip(b)
                        .map(|(x, bb)| elu(x + bb))
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>(),
        );
    }
    (0..n)
        .map(|v| {
            if concat {
                per_head.iter().flat_map(|hd| hd[v].clone()).collect()
            } else {
                let d = per_head[0][v].len();
                (0..d)
                    .map(|j| per_head.iter().map(|hd| hd[v][j]).sum::<f64>() / heads as f64)
                    .collect()
            }
        })
        .collect()
}

/// ELU hidden layers, logistic output.
pub fn dense_mlp(params: &ParamStore, layers: usize, h: &[Vec<f64>]) -> Vec<f64> {
    let mut x = h.to_vec();
    for i in 0..layers {
        let w = param(params, &format!("mlp.{i}.w"));
        let b = &param(params, &format!("mlp.{i}.b"))[0];
        let z = matmul(&x, &w);
        x = z
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(b)
                    .map(|(v, bb)| {
                        let s = v + bb;
                        if i + 1 == layers {
                            1.0 / (1.0 + (-s).exp())
                        } else {
                            elu(s)
                        }
                    })
                    .collect()
            })
            .collect();
    }
    x.into_iter().map(|row| row[0]).collect()
}

/// Plain GATv2 stack over 1-hop neighborhoods followed by the MLP head,
/// reading the embedding-network parameters `psi{l}` of a model.
pub fn dense_gatv2_stack(
    params: &ParamStore,
    heads: &[usize],
    mlp_layers: usize,
    features: &[Vec<f64>],
    graph: &SparseGraph,
) -> Vec<f64> {
    let nbrs: Vec<Vec<usize>> = (0..graph.num_nodes())
        .map(|v| graph.neighbors(v).to_vec())
        .collect();
    let mut h = features.to_vec();
    for (l, &k) in heads.iter().enumerate() {
        let last = l + 1 == heads.len();
        h = dense_gatv2(params, &format!("psi{l}"), k, !last, &h, &nbrs);
    }
    dense_mlp(params, mlp_layers, &h)
}

/// Shortest-distance classes from boolean adjacency powers: `u` is at
/// distance `r` from `v` iff a walk of length `r` exists and none shorter
/// does (`u != v`). Returns `rings[v][r]`, sorted, for `r` up to the
/// largest realized distance.
pub fn matrix_power_rings(graph: &SparseGraph) -> Vec<Vec<Vec<usize>>> {
    let n = graph.num_nodes();
    let mut adj = vec![vec![false; n]; n];
    for v in 0..n {
        for &u in graph.neighbors(v) {
            adj[v][u] = true;
        }
    }
    let mut seen: Vec<Vec<bool>> = (0..n).map(|v| (0..n).map(|u| u == v).collect()).collect();
    let mut power = adj.clone();
    let mut rings: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new()]; n];
    loop {
        let mut any = false;
        for v in 0..n {
            let ring: Vec<usize> = (0..n).filter(|&u| power[v][u] && !seen[v][u]).collect();
            any |= !ring.is_empty();
            rings[v].push(ring);
        }
        if !any {
            for r in &mut rings {
                r.pop();
            }
            return rings;
        }
        for v in 0..n {
            for u in 0..n {
                seen[v][u] |= power[v][u];
            }
        }
        // next boolean power
        power = (0..n)
            .map(|v| {
                (0..n)
                    .map(|u| (0..n).any(|w| power[v][w] && adj[w][u]))
                    .collect()
            })
            .collect();
    }
}
