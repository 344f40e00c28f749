use std::collections::VecDeque;

use super::SparseGraph;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ORDER_CAP: usize = 8;

/// Exact shortest-path rings: `neighbors(v, r)` holds the nodes at distance
/// exactly `r` from `v`, for `1 <= r <= max_order`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopIndex {
    max_order: usize,
    /// `rings[r - 1]` is the compressed row structure for order `r`.
    rings: Vec<(Vec<usize>, Vec<usize>)>,
    eccentricity: Vec<usize>,
    effective_diameter: usize,
}

impl HopIndex {
    pub fn num_nodes(&self) -> usize {
        self.eccentricity.len()
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Size of the order set `{0, 1, ..., max_order}`.
    pub fn num_orders(&self) -> usize {
        self.max_order + 1
    }

    pub fn effective_diameter(&self) -> usize {
        self.effective_diameter
    }

    pub fn eccentricity(&self) -> &[usize] {
        &self.eccentricity
    }

    /// Unchecked ring lookup; order 0 is empty.
    pub fn ring(&self, v: usize, r: usize) -> &[usize] {
        if r == 0 {
            return &[];
        }
        let (offsets, cols) = &self.rings[r - 1];
        &cols[offsets[v]..offsets[v + 1]]
    }

    /// Orders with a nonempty ring at `v`; order 0 is always supported.
    pub fn support(&self, v: usize) -> Vec<bool> {
        (0..=self.max_order)
            .map(|r| r == 0 || !self.ring(v, r).is_empty())
            .collect()
    }

    /// Total ring entries per order, index 0 unused.
    pub fn ring_sizes(&self) -> Vec<usize> {
        std::iter::once(0)
            .chain(self.rings.iter().map(|(_, c)| c.len()))
            .collect()
    }

    /// Per-node neighbor lists at a single order.
    pub fn neighborhoods(&self, r: usize) -> Result<Vec<Vec<usize>>> {
        (0..self.num_nodes())
            .map(|v| khop_neighbors(self, v, r).map(<[usize]>::to_vec))
            .collect()
    }
}

/// BFS from every node. Orders are kept up to
/// `min(effective_diameter, max_order_cap)`.
pub fn build_hop_index(g: &SparseGraph, max_order_cap: usize) -> Result<HopIndex> {
    if max_order_cap == 0 {
        return Err(Error::InvalidArgument(
            "max_order_cap must be at least 1".into(),
        ));
    }
    let n = g.num_nodes();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    let mut eccentricity = vec![0; n];
    // per source: nodes grouped by distance, distance 1..=cap
    let mut per_source: Vec<Vec<Vec<usize>>> = Vec::with_capacity(n);
    for s in 0..n {
        let mut touched = vec![s];
        dist[s] = 0;
        queue.push_back(s);
        let mut levels: Vec<Vec<usize>> = Vec::new();
        while let Some(u) = queue.pop_front() {
            let d = dist[u];
            eccentricity[s] = eccentricity[s].max(d);
            if d >= 1 && d <= max_order_cap {
                if levels.len() < d {
                    levels.resize(d, Vec::new());
                }
                levels[d - 1].push(u);
            }
            for &w in g.neighbors(u) {
                if dist[w] == usize::MAX {
                    dist[w] = d + 1;
                    touched.push(w);
                    queue.push_back(w);
                }
            }
        }
        for &t in &touched {
            dist[t] = usize::MAX;
        }
        for level in &mut levels {
            level.sort_unstable();
        }
        per_source.push(levels);
    }
    let effective_diameter = eccentricity.iter().copied().max().unwrap_or(0);
    let max_order = effective_diameter.min(max_order_cap);
    let rings = (1..=max_order)
        .map(|r| {
            let mut offsets = Vec::with_capacity(n + 1);
            let mut cols = Vec::new();
            offsets.push(0);
            for levels in &per_source {
                if let Some(level) = levels.get(r - 1) {
                    cols.extend_from_slice(level);
                }
                offsets.push(cols.len());
            }
            (offsets, cols)
        })
        .collect();
    Ok(HopIndex {
        max_order,
        rings,
        eccentricity,
        effective_diameter,
    })
}

/// Nodes at distance exactly `r` from `v`, sorted. Order 0 is empty: the
/// node itself enters aggregation through the self-loop.
pub fn khop_neighbors(idx: &HopIndex, v: usize, r: usize) -> Result<&[usize]> {
    if r > idx.max_order {
        return Err(Error::InvalidArgument(format!(
            "order {r} exceeds max order {}",
            idx.max_order
        )));
    }
    if v >= idx.num_nodes() {
        return Err(Error::InvalidArgument(format!("node {v} out of range")));
    }
    Ok(idx.ring(v, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> SparseGraph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        SparseGraph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn seven_node_path() {
        let idx = build_hop_index(&path(7), 8).unwrap();
        assert_eq!(idx.effective_diameter(), 6);
        assert_eq!(idx.max_order(), 6);
        assert_eq!(khop_neighbors(&idx, 0, 6).unwrap(), &[6]);
        assert_eq!(khop_neighbors(&idx, 6, 6).unwrap(), &[0]);
        assert_eq!(khop_neighbors(&idx, 0, 3).unwrap(), &[3]);
        assert_eq!(khop_neighbors(&idx, 0, 4).unwrap(), &[4]);
        assert_eq!(khop_neighbors(&idx, 3, 3).unwrap(), &[0, 6]);
        assert!(khop_neighbors(&idx, 3, 4).unwrap().is_empty());
        assert_eq!(idx.eccentricity()[3], 3);
    }

    #[test]
    fn complete_graph_has_order_one() {
        let mut edges = Vec::new();
        for u in 0..4 {
            for v in u + 1..4 {
                edges.push((u, v));
            }
        }
        let idx = build_hop_index(&SparseGraph::from_edges(4, &edges).unwrap(), 8).unwrap();
        assert_eq!(idx.max_order(), 1);
        assert_eq!(khop_neighbors(&idx, 2, 1).unwrap(), &[0, 1, 3]);
    }

    #[test]
    fn star_center_sees_leaves() {
        let g = SparseGraph::from_edges(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        let idx = build_hop_index(&g, 8).unwrap();
        assert_eq!(khop_neighbors(&idx, 0, 1).unwrap(), &[1, 2, 3, 4]);
        assert!(khop_neighbors(&idx, 0, 0).unwrap().is_empty());
        assert_eq!(khop_neighbors(&idx, 1, 2).unwrap(), &[2, 3, 4]);
    }

    #[test]
    fn cap_limits_orders_and_range_is_checked() {
        let idx = build_hop_index(&path(10), 3).unwrap();
        assert_eq!(idx.effective_diameter(), 9);
        assert_eq!(idx.max_order(), 3);
        assert!(khop_neighbors(&idx, 0, 4).is_err());
        assert!(build_hop_index(&path(3), 0).is_err());
    }

    #[test]
    fn disconnected_and_edgeless() {
        let g = SparseGraph::from_edges(5, &[(0, 1), (2, 3)]).unwrap();
        let idx = build_hop_index(&g, 8).unwrap();
        assert_eq!(idx.effective_diameter(), 1);
        assert_eq!(idx.eccentricity()[4], 0);
        assert_eq!(idx.support(4), vec![true, false]);
        let empty = build_hop_index(&SparseGraph::from_edges(3, &[]).unwrap(), 8).unwrap();
        assert_eq!(empty.max_order(), 0);
        assert_eq!(empty.num_orders(), 1);
    }
}
